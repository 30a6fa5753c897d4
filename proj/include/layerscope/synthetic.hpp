#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace layerscope {

// Synthetic representation dumps with known structure, for demos and
// end-to-end checks.
//
// kPlanted: layer l = a_l * phone_embedding + b_l * acoustic + shared noise.
//   a_l peaks at peak_layer; b_l is largest at layers 0 and L and smallest at
//   the peak. Layer 0 carries its own noise instead of the shared one, so
//   transformer layers resemble it only through the acoustic part.
// kMelCopy: audio is synthesized per phone and every layer is an exact copy
//   of that audio's log mel features.
enum class SyntheticKind { kPlanted, kMelCopy };

struct SyntheticSpec {
  SyntheticKind kind = SyntheticKind::kPlanted;
  std::uint32_t num_layers = 12;
  std::uint32_t peak_layer = 6;
  std::uint32_t dim = 32;
  std::uint32_t acoustic_dim = 8;
  std::uint32_t num_utterances = 150;
  std::uint32_t min_frames = 80;
  std::uint32_t max_frames = 160;
  std::uint32_t num_words = 50;
  double shared_noise = 2.0;
  double independent_noise = 0.1;
  bool write_audio = false;  // always on for kMelCopy
  std::uint64_t seed = 7;
};

struct SyntheticDump {
  std::filesystem::path manifest;
  std::filesystem::path phone_alignments;
  std::filesystem::path word_alignments;
  std::filesystem::path utterance_labels;
  std::vector<double> phone_profile;     // a_l, index = layer
  std::vector<double> acoustic_profile;  // b_l, index = layer
};

// Writes layer files, alignments, labels, optional audio and manifest.json
// into dir (created if needed).
SyntheticDump write_synthetic_dump(const SyntheticSpec& spec, const std::filesystem::path& dir);

// The 39-phone inventory used for synthetic alignments.
const std::vector<std::string>& synthetic_phone_set();

std::vector<double> planted_phone_profile(std::uint32_t num_layers, std::uint32_t peak_layer);
std::vector<double> planted_acoustic_profile(std::uint32_t num_layers, std::uint32_t peak_layer);

}  // namespace layerscope
