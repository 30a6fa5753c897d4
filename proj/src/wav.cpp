#include "layerscope/wav.hpp"

#include "layerscope/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

namespace layerscope {
namespace {

std::uint32_t le32(std::string_view b, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b[at + i])) << (8 * i);
  return v;
}

std::uint16_t le16(std::string_view b, std::size_t at) {
  return static_cast<std::uint16_t>(static_cast<unsigned char>(b[at]) |
                                    (static_cast<unsigned char>(b[at + 1]) << 8));
}

void put(std::string& out, std::uint32_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

}  // namespace

Waveform decode_wav(std::string_view bytes) {
  if (bytes.size() < 12 || bytes.substr(0, 4) != "RIFF" || bytes.substr(8, 4) != "WAVE") {
    throw Error(ErrorCode::kUnsupportedAudio, "not a RIFF/WAVE file");
  }
  bool have_fmt = false;
  Waveform wav;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const auto id = bytes.substr(pos, 4);
    const std::size_t size = le32(bytes, pos + 4);
    const std::size_t body = pos + 8;
    if (body + size > bytes.size()) throw Error(ErrorCode::kUnsupportedAudio, "truncated chunk");
    if (id == "fmt ") {
      if (size < 16) throw Error(ErrorCode::kUnsupportedAudio, "short fmt chunk");
      const auto format = le16(bytes, body);
      const auto channels = le16(bytes, body + 2);
      const auto bits = le16(bytes, body + 14);
      if (format != 1 || channels != 1 || bits != 16) {
        throw Error(ErrorCode::kUnsupportedAudio,
                    "need 16-bit PCM mono, got format " + std::to_string(format) + ", " +
                        std::to_string(channels) + " channels, " + std::to_string(bits) + " bits");
      }
      wav.sample_rate = le32(bytes, body + 4);
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw Error(ErrorCode::kUnsupportedAudio, "data chunk before fmt chunk");
      wav.samples.resize(size / 2);
      for (std::size_t i = 0; i < wav.samples.size(); ++i) {
        const auto raw = static_cast<std::int16_t>(le16(bytes, body + 2 * i));
        wav.samples[i] = static_cast<float>(raw) / 32768.0f;
      }
      return wav;
    }
    pos = body + size + (size & 1u);
  }
  throw Error(ErrorCode::kUnsupportedAudio, "no data chunk");
}

Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoFailure, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return decode_wav(buf.str());
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.detail());
  }
}

void write_wav(const std::filesystem::path& path, std::span<const float> samples, std::uint32_t sample_rate) {
  const auto data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  std::string out;
  out.reserve(44 + data_bytes);
  out.append("RIFF");
  put(out, 36 + data_bytes, 4);
  out.append("WAVEfmt ");
  put(out, 16, 4);
  put(out, 1, 2);  // PCM
  put(out, 1, 2);  // mono
  put(out, sample_rate, 4);
  put(out, sample_rate * 2, 4);
  put(out, 2, 2);
  put(out, 16, 2);
  out.append("data");
  put(out, data_bytes, 4);
  for (const float s : samples) {
    const long q = std::lround(std::clamp(s, -1.0f, 1.0f) * 32767.0f);
    put(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)), 2);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(ErrorCode::kIoFailure, "cannot write " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

}  // namespace layerscope
