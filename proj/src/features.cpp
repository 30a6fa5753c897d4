#include "layerscope/features.hpp"

#include "layerscope/error.hpp"
#include "layerscope/log.hpp"

#include <Eigen/Core>
#include <unsupported/Eigen/FFT>

#include <cmath>
#include <complex>
#include <map>
#include <numbers>

namespace layerscope {

std::size_t MelConfig::win_samples() const {
  return static_cast<std::size_t>(std::lround(win_ms * sample_rate_hz / 1000.0));
}

std::size_t MelConfig::hop_samples() const {
  return static_cast<std::size_t>(std::lround(hop_ms * sample_rate_hz / 1000.0));
}

std::size_t MelConfig::fft_size() const {
  std::size_t n = 1;
  while (n < win_samples()) n <<= 1;
  return n;
}

void MelConfig::validate() const {
  if (sample_rate_hz == 0 || n_mels == 0) throw Error(ErrorCode::kInvalidConfig, "sample rate and n_mels must be positive");
  if (!(win_ms > 0.0) || !(hop_ms > 0.0)) throw Error(ErrorCode::kInvalidConfig, "window and hop must be positive");
  if (win_samples() < 2 || hop_samples() < 1) throw Error(ErrorCode::kInvalidConfig, "window shorter than two samples");
  if (!(fmin_hz >= 0.0) || !(fmin_hz < upper_hz()) || upper_hz() > sample_rate_hz / 2.0) {
    throw Error(ErrorCode::kInvalidConfig, "need 0 <= fmin < fmax <= sample_rate / 2");
  }
  if (!(log_floor > 0.0)) throw Error(ErrorCode::kInvalidConfig, "log_floor must be positive");
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

namespace {

// n_mels + 2 edge frequencies equally spaced on the mel scale.
std::vector<double> mel_edges(const MelConfig& cfg) {
  const double lo = hz_to_mel(cfg.fmin_hz);
  const double hi = hz_to_mel(cfg.upper_hz());
  std::vector<double> edges(cfg.n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(cfg.n_mels + 1));
  }
  return edges;
}

Eigen::MatrixXd filterbank(const MelConfig& cfg) {
  const std::size_t nfft = cfg.fft_size();
  const std::size_t bins = nfft / 2 + 1;
  const auto edges = mel_edges(cfg);
  Eigen::MatrixXd fb = Eigen::MatrixXd::Zero(cfg.n_mels, static_cast<Eigen::Index>(bins));
  for (std::size_t m = 0; m < cfg.n_mels; ++m) {
    const double left = edges[m], center = edges[m + 1], right = edges[m + 2];
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * cfg.sample_rate_hz / static_cast<double>(nfft);
      const double w = std::min((f - left) / (center - left), (right - f) / (right - center));
      if (w > 0.0) fb(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k)) = w;
    }
  }
  return fb;
}

}  // namespace

std::vector<double> mel_center_frequencies(const MelConfig& cfg) {
  const auto edges = mel_edges(cfg);
  return {edges.begin() + 1, edges.end() - 1};
}

std::size_t mel_frame_count(std::size_t num_samples, const MelConfig& cfg) {
  const std::size_t win = cfg.win_samples();
  if (num_samples < win) return 0;
  return (num_samples - win) / cfg.hop_samples() + 1;
}

RepMatrix mel_filterbank(std::span<const float> waveform, std::uint32_t sample_rate, const MelConfig& cfg) {
  cfg.validate();
  if (waveform.empty()) throw Error(ErrorCode::kEmptyWaveform, "waveform has no samples");
  if (sample_rate != cfg.sample_rate_hz) {
    throw Error(ErrorCode::kSampleRateMismatch,
                "waveform at " + std::to_string(sample_rate) + " Hz, config expects " + std::to_string(cfg.sample_rate_hz));
  }
  const std::size_t frames = mel_frame_count(waveform.size(), cfg);
  if (frames == 0) throw Error(ErrorCode::kEmptyWaveform, "waveform shorter than one analysis window");

  const std::size_t win = cfg.win_samples();
  const std::size_t hop = cfg.hop_samples();
  const std::size_t nfft = cfg.fft_size();
  const std::size_t bins = nfft / 2 + 1;

  std::vector<double> window(win);
  for (std::size_t i = 0; i < win; ++i) {
    window[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(win));
  }
  const Eigen::MatrixXd fb = filterbank(cfg);

  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<double> buffer(nfft, 0.0);
  std::vector<std::complex<double>> spectrum;
  Eigen::VectorXd power(static_cast<Eigen::Index>(bins));

  RepMatrix out;
  out.rows = static_cast<std::uint32_t>(frames);
  out.cols = cfg.n_mels;
  out.granularity = Granularity::kFrame;
  out.values.resize(frames * cfg.n_mels);
  for (std::size_t f = 0; f < frames; ++f) {
    const std::size_t start = f * hop;
    for (std::size_t i = 0; i < win; ++i) buffer[i] = waveform[start + i] * window[i];
    fft.fwd(spectrum, buffer);
    for (std::size_t k = 0; k < bins; ++k) power(static_cast<Eigen::Index>(k)) = std::norm(spectrum[k]);
    const Eigen::VectorXd energy = fb * power;
    for (std::size_t m = 0; m < cfg.n_mels; ++m) {
      out.values[f * cfg.n_mels + m] =
          static_cast<float>(std::log(energy(static_cast<Eigen::Index>(m)) + cfg.log_floor));
    }
  }
  return out;
}

PooledSegments pool_segments(const RepMatrix& frames, const FrameLayout& layout, const AlignmentTable& alignments,
                             double frame_stride_ms) {
  if (!(frame_stride_ms > 0.0)) throw Error(ErrorCode::kInvalidConfig, "frame stride must be positive");
  if (frames.rows < layout.total_frames) {
    throw Error(ErrorCode::kShapeMismatch, "frame matrix shorter than the frame layout");
  }
  std::map<std::string, std::uint32_t, std::less<>> utt_index;
  for (std::size_t u = 0; u < layout.utterance_ids.size(); ++u) {
    utt_index.emplace(layout.utterance_ids[u], static_cast<std::uint32_t>(u));
  }

  PooledSegments out;
  out.vocab = alignments.label_vocab;
  out.source_layer = frames.layer_id;
  out.matrix.cols = frames.cols;
  out.matrix.layer_id = frames.layer_id;
  out.matrix.granularity = Granularity::kPhone;

  std::vector<double> acc(frames.cols);
  for (const auto& rec : alignments.records) {
    const auto it = utt_index.find(rec.utterance_id);
    if (it == utt_index.end()) {
      throw Error(ErrorCode::kUnknownUtterance, "utterance '" + rec.utterance_id + "' has no frames");
    }
    const std::uint32_t u = it->second;
    const double start_ms = rec.start_s * 1000.0;
    const double end_ms = rec.end_s * 1000.0;
    // First frame whose center reaches start_ms, then walk while centers < end_ms.
    auto first = static_cast<std::int64_t>(std::ceil(start_ms / frame_stride_ms - 0.5));
    first = std::max<std::int64_t>(first, 0);
    while (first > 0 && (static_cast<double>(first - 1) + 0.5) * frame_stride_ms >= start_ms) --first;
    while ((static_cast<double>(first) + 0.5) * frame_stride_ms < start_ms) ++first;

    std::fill(acc.begin(), acc.end(), 0.0);
    std::size_t captured = 0;
    for (auto f = first; f < static_cast<std::int64_t>(layout.counts[u]); ++f) {
      if ((static_cast<double>(f) + 0.5) * frame_stride_ms >= end_ms) break;
      const std::size_t row = layout.offsets[u] + static_cast<std::size_t>(f);
      for (std::size_t c = 0; c < frames.cols; ++c) acc[c] += frames.at(row, c);
      ++captured;
    }
    if (captured == 0) {
      ++out.dropped;
      continue;
    }
    for (std::size_t c = 0; c < frames.cols; ++c) {
      out.matrix.values.push_back(static_cast<float>(acc[c] / static_cast<double>(captured)));
    }
    out.labels.push_back(alignments.label_index(rec.label));
    out.utterance.push_back(u);
  }
  out.matrix.rows = static_cast<std::uint32_t>(out.labels.size());
  if (out.labels.empty()) throw Error(ErrorCode::kAllSegmentsEmpty, "no segment captured a frame center");
  if (out.dropped > 0) log().info("pooling dropped {} segment(s) narrower than a frame", out.dropped);
  return out;
}

std::vector<std::pair<std::uint32_t, std::uint32_t>> pair_frames(std::uint32_t count_a, double stride_a_ms,
                                                                 std::uint32_t count_b, double stride_b_ms) {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;
  if (stride_a_ms == stride_b_ms) {
    const auto n = std::min(count_a, count_b);
    pairs.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) pairs.emplace_back(i, i);
    return pairs;
  }
  for (std::uint32_t i = 0; i < count_a; ++i) {
    const double center = (static_cast<double>(i) + 0.5) * stride_a_ms;
    const auto j = static_cast<std::int64_t>(std::floor(center / stride_b_ms));
    if (j < 0 || j >= static_cast<std::int64_t>(count_b)) continue;
    pairs.emplace_back(i, static_cast<std::uint32_t>(j));
  }
  return pairs;
}

}  // namespace layerscope
