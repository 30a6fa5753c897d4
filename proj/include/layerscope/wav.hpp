#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

namespace layerscope {

struct Waveform {
  std::vector<float> samples;  // scaled to [-1, 1)
  std::uint32_t sample_rate = 16000;
};

// 16-bit PCM mono RIFF/WAVE only; anything else is UnsupportedAudio.
Waveform read_wav(const std::filesystem::path& path);
Waveform decode_wav(std::string_view bytes);
// Clips to the int16 range.
void write_wav(const std::filesystem::path& path, std::span<const float> samples,
               std::uint32_t sample_rate);

}  // namespace layerscope
