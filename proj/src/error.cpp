#include "layerscope/error.hpp"

namespace layerscope {

std::string_view error_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::kBadMagic: return "BadMagic";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kNonFiniteValue: return "NonFiniteValue";
    case ErrorCode::kIoFailure: return "IoFailure";
    case ErrorCode::kParseError: return "ParseError";
    case ErrorCode::kOverlapError: return "OverlapError";
    case ErrorCode::kEmptySegment: return "EmptySegment";
    case ErrorCode::kManifestError: return "ManifestError";
    case ErrorCode::kFrameCountMismatch: return "FrameCountMismatch";
    case ErrorCode::kVocabSizeMismatch: return "VocabSizeMismatch";
    case ErrorCode::kUnsupportedAudio: return "UnsupportedAudio";
    case ErrorCode::kRowCountMismatch: return "RowCountMismatch";
    case ErrorCode::kDegenerateInput: return "DegenerateInput";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kUnknownLabel: return "UnknownLabel";
    case ErrorCode::kEmptyInput: return "EmptyInput";
    case ErrorCode::kInvalidConfig: return "InvalidConfig";
    case ErrorCode::kEmptyWaveform: return "EmptyWaveform";
    case ErrorCode::kSampleRateMismatch: return "SampleRateMismatch";
    case ErrorCode::kUnknownUtterance: return "UnknownUtterance";
    case ErrorCode::kAllSegmentsEmpty: return "AllSegmentsEmpty";
    case ErrorCode::kInsufficientData: return "InsufficientData";
    case ErrorCode::kTooFewInstances: return "TooFewInstances";
    case ErrorCode::kAllGridPointsFailed: return "AllGridPointsFailed";
    case ErrorCode::kMissingInput: return "MissingInput";
    case ErrorCode::kSingleClass: return "SingleClass";
    case ErrorCode::kNonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::kLayerShapeMismatch: return "LayerShapeMismatch";
    case ErrorCode::kLengthMismatch: return "LengthMismatch";
    case ErrorCode::kConstantInput: return "ConstantInput";
    case ErrorCode::kNoCommonLayers: return "NoCommonLayers";
  }
  return "Unknown";
}

}  // namespace layerscope
