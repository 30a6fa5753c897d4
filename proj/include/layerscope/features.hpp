#pragma once

#include "layerscope/tensor_io.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace layerscope {

struct MelConfig {
  std::uint32_t sample_rate_hz = 16000;
  std::uint32_t n_mels = 80;
  double win_ms = 25.0;
  double hop_ms = 20.0;
  double fmin_hz = 0.0;
  std::optional<double> fmax_hz;  // defaults to Nyquist
  double log_floor = 1e-10;

  double upper_hz() const { return fmax_hz.value_or(sample_rate_hz / 2.0); }
  std::size_t win_samples() const;
  std::size_t hop_samples() const;
  std::size_t fft_size() const;  // next power of two >= win_samples
  void validate() const;
};

// HTK mel scale.
double hz_to_mel(double hz);
double mel_to_hz(double mel);
// Peak frequency of each triangular filter, ascending.
std::vector<double> mel_center_frequencies(const MelConfig& cfg);

std::size_t mel_frame_count(std::size_t num_samples, const MelConfig& cfg);

// Log mel filterbank: periodic Hann window, zero-padded power-of-two FFT, power
// spectrum, unnormalized triangular filters, natural log of (energy + floor).
RepMatrix mel_filterbank(std::span<const float> waveform, std::uint32_t sample_rate, const MelConfig& cfg);

struct PooledSegments {
  RepMatrix matrix;                    // one row per kept segment
  std::vector<std::size_t> labels;     // index into vocab
  std::vector<std::uint32_t> utterance;  // index into the frame layout
  std::vector<std::string> vocab;
  std::uint32_t source_layer = 0;
  std::size_t dropped = 0;  // segments that captured no frame center
};

// Mean of the frames whose centers (f + 0.5) * stride fall in [start, end).
// Rows follow the alignment table's (utterance, start) order.
PooledSegments pool_segments(const RepMatrix& frames, const FrameLayout& layout, const AlignmentTable& alignments,
                             double frame_stride_ms);

// Pairs frames of two streams covering the same audio. Equal strides pair
// index-by-index up to the shorter length; otherwise each frame of A takes the
// B frame with the nearest center.
std::vector<std::pair<std::uint32_t, std::uint32_t>> pair_frames(std::uint32_t count_a, double stride_a_ms,
                                                                 std::uint32_t count_b, double stride_b_ms);

}  // namespace layerscope
