#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace layerscope {

// Every failure the library reports maps to one of these codes. The CLI turns
// them into exit codes; bindings surface them as Python exceptions.
enum class ErrorCode {
  // tensor-io
  kBadMagic,
  kShapeMismatch,
  kNonFiniteValue,
  kIoFailure,
  kParseError,
  kOverlapError,
  kEmptySegment,
  kManifestError,
  kFrameCountMismatch,
  kVocabSizeMismatch,
  kUnsupportedAudio,
  // cca-core
  kRowCountMismatch,
  kDegenerateInput,
  kDimensionMismatch,
  kUnknownLabel,
  kEmptyInput,
  kInvalidConfig,
  // features
  kEmptyWaveform,
  kSampleRateMismatch,
  kUnknownUtterance,
  kAllSegmentsEmpty,
  // protocol
  kInsufficientData,
  kTooFewInstances,
  kAllGridPointsFailed,
  kMissingInput,
  // probes
  kSingleClass,
  kNonFiniteLoss,
  kLayerShapeMismatch,
  kLengthMismatch,
  kConstantInput,
  kNoCommonLayers,
};

std::string_view error_name(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_name(code)) + ": " + message),
        code_(code),
        detail_(message) {}

  ErrorCode code() const noexcept { return code_; }
  std::string_view name() const noexcept { return error_name(code_); }
  // Message without the leading error name.
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace layerscope
