#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace layerscope {

enum class Granularity : std::uint8_t { kFrame = 0, kPhone = 1, kWord = 2, kUtterance = 3 };

std::string_view granularity_name(Granularity g) noexcept;
// Accepts "frame", "phone", "word", "utterance"; throws ParseError otherwise.
Granularity parse_granularity(std::string_view name);

// n x d block of f32 vectors for one layer at one granularity, row-major.
struct RepMatrix {
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<float> values;
  std::uint32_t layer_id = 0;
  Granularity granularity = Granularity::kFrame;

  float at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }

  // Throws ShapeMismatch / NonFiniteValue when the invariants do not hold.
  void validate() const;

  Eigen::MatrixXd to_eigen() const;
  static RepMatrix from_eigen(const Eigen::Ref<const Eigen::MatrixXd>& m, std::uint32_t layer_id = 0,
                              Granularity granularity = Granularity::kFrame);

  friend bool operator==(const RepMatrix&, const RepMatrix&) = default;
};

// "LREP1" binary layout: 5 magic bytes, u32 rows, u32 cols, u32 packed word
// (low 8 bits granularity, high 24 bits layer id), then rows*cols f32. All
// integers and floats are little-endian.
inline constexpr std::string_view kRepMagic = "LREP1";
inline constexpr std::size_t kRepHeaderBytes = 17;
inline constexpr std::uint32_t kMaxLayerId = (1u << 24) - 1;

struct RepHeader {
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::uint32_t layer_id = 0;
  Granularity granularity = Granularity::kFrame;
};

RepMatrix read_rep(const std::filesystem::path& path);
RepMatrix decode_rep(std::string_view bytes);
// Reads only the 17-byte header; does not touch the payload.
RepHeader read_rep_header(const std::filesystem::path& path);
void write_rep(const RepMatrix& matrix, const std::filesystem::path& path);
std::string encode_rep(const RepMatrix& matrix);

// ---------------------------------------------------------------------------
// Manifest

struct LayerFile {
  std::uint32_t layer_id = 0;
  Granularity granularity = Granularity::kFrame;
  std::filesystem::path path;  // resolved against the manifest directory
};

struct UtteranceEntry {
  std::string id;
  // Frame count per layer (index = layer id) or a single shared count.
  std::vector<std::uint32_t> frames;
  std::optional<std::filesystem::path> audio;

  std::uint32_t frames_for(std::uint32_t layer_id) const {
    return frames.size() == 1 ? frames.front() : frames.at(layer_id);
  }
};

struct Manifest {
  std::string model_name;
  std::uint32_t num_layers = 0;  // transformer layers; ids run 0..num_layers
  double frame_stride_ms = 20.0;
  std::uint32_t sample_rate_hz = 16000;
  std::vector<LayerFile> layers;
  std::vector<UtteranceEntry> utterances;  // optional; frame files are concatenations in this order
  std::map<std::string, std::filesystem::path> alignments;  // keyed by "phone" / "word"
  std::optional<std::filesystem::path> audio_dir;
  std::filesystem::path base_dir;

  const LayerFile* find_layer(std::uint32_t layer_id, Granularity g) const;
};

Manifest load_manifest(const std::filesystem::path& path);
Manifest parse_manifest(std::string_view json_text, const std::filesystem::path& base_dir);
void save_manifest(const Manifest& manifest, const std::filesystem::path& path);

// Max per-utterance frame-count spread tolerated across layers before the
// manifest is rejected; smaller spreads are truncated to the minimum.
inline constexpr std::uint32_t kFrameTruncationTolerance = 3;

// Per-utterance frame ranges shared by every frame-granularity layer after
// truncation to the minimum count.
struct FrameLayout {
  std::vector<std::string> utterance_ids;
  std::vector<std::uint32_t> offsets;  // into the truncated concatenation
  std::vector<std::uint32_t> counts;
  std::uint32_t total_frames = 0;

  // Utterance index per truncated frame row.
  std::vector<std::uint32_t> frame_owner() const;
};

FrameLayout frame_layout(const Manifest& manifest);
// Loads a frame-granularity layer and drops each utterance's trailing frames
// beyond the layout's count.
RepMatrix load_frame_layer(const Manifest& manifest, const FrameLayout& layout,
                           std::uint32_t layer_id);

struct ValidationIssue {
  std::string error;  // ErrorCode name
  std::string message;
  std::optional<std::uint32_t> layer_id;
};

struct ValidationOptions {
  std::map<std::string, std::size_t> expected_vocab;  // granularity name -> size
  std::map<std::string, std::filesystem::path> extra_alignments;
};

// Collects every problem rather than stopping at the first.
std::vector<ValidationIssue> validate_manifest(const Manifest& manifest,
                                               const ValidationOptions& options = {});

// ---------------------------------------------------------------------------
// Alignments

struct AlignmentRecord {
  std::string utterance_id;
  double start_s = 0.0;
  double end_s = 0.0;
  std::string label;
};

struct AlignmentTable {
  std::vector<AlignmentRecord> records;  // sorted by (utterance_id, start_s)
  std::vector<std::string> label_vocab;  // sorted, unique

  // Index into label_vocab; throws UnknownLabel.
  std::size_t label_index(std::string_view label) const;
};

AlignmentTable read_alignments(const std::filesystem::path& path);
AlignmentTable parse_alignments(std::istream& in);
AlignmentTable make_alignment_table(std::vector<AlignmentRecord> records);
void write_alignments(const AlignmentTable& table, const std::filesystem::path& path);

// Utterance-level label file: utterance_id<TAB>label per line.
std::vector<std::pair<std::string, std::string>> read_utterance_labels(
    const std::filesystem::path& path);

}  // namespace layerscope
