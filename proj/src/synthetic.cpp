#include "layerscope/synthetic.hpp"

#include "layerscope/error.hpp"
#include "layerscope/features.hpp"
#include "layerscope/rng.hpp"
#include "layerscope/tensor_io.hpp"
#include "layerscope/wav.hpp"

#include <Eigen/Core>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

namespace layerscope {

namespace fs = std::filesystem;

namespace {

constexpr double kStrideMs = 20.0;
constexpr std::uint32_t kSampleRate = 16000;
constexpr std::uint32_t kHopSamples = 320;
constexpr std::uint32_t kTailSamples = 80;  // 25 ms window minus 20 ms hop
constexpr std::size_t kNumSpeakers = 4;

struct Utterance {
  std::string id;
  std::vector<std::size_t> frame_phone;  // phone id per frame
  std::vector<AlignmentRecord> phones;
  std::vector<AlignmentRecord> words;
  std::size_t speaker = 0;
};

Eigen::MatrixXd gaussian(Rng& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = scale * rng.normal();
  }
  return m;
}

std::string numbered(const char* prefix, std::size_t i, int width) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%0*zu", prefix, width, i);
  return buf;
}

// Word lexicon: the first words walk through the phone set in order so every
// phone occurs; the rest are random 2-4 phone sequences.
std::vector<std::vector<std::size_t>> make_lexicon(Rng& rng, std::size_t num_words, std::size_t num_phones) {
  std::vector<std::vector<std::size_t>> words;
  for (std::size_t p = 0; p < num_phones; p += 3) {
    std::vector<std::size_t> w;
    for (std::size_t k = p; k < std::min(p + 3, num_phones); ++k) w.push_back(k);
    words.push_back(std::move(w));
  }
  while (words.size() < num_words) {
    const std::size_t len = 2 + static_cast<std::size_t>(rng.below(3));
    std::vector<std::size_t> w(len);
    for (auto& p : w) p = static_cast<std::size_t>(rng.below(num_phones));
    words.push_back(std::move(w));
  }
  return words;
}

std::vector<Utterance> make_utterances(const SyntheticSpec& spec, Rng& rng) {
  const auto& phones = synthetic_phone_set();
  const auto lexicon = make_lexicon(rng, std::max<std::size_t>(spec.num_words, 13), phones.size());
  std::vector<Utterance> utts;
  for (std::size_t u = 0; u < spec.num_utterances; ++u) {
    Utterance utt;
    utt.id = numbered("utt", u, 4);
    utt.speaker = u % kNumSpeakers;
    const std::size_t target =
        spec.min_frames + static_cast<std::size_t>(rng.below(spec.max_frames - spec.min_frames + 1));
    while (utt.frame_phone.size() < target) {
      const std::size_t w = static_cast<std::size_t>(rng.below(lexicon.size()));
      const double word_start = static_cast<double>(utt.frame_phone.size()) * kStrideMs / 1000.0;
      for (std::size_t p : lexicon[w]) {
        const double start = static_cast<double>(utt.frame_phone.size()) * kStrideMs / 1000.0;
        const std::size_t dur = 3 + static_cast<std::size_t>(rng.below(6));
        utt.frame_phone.insert(utt.frame_phone.end(), dur, p);
        const double end = static_cast<double>(utt.frame_phone.size()) * kStrideMs / 1000.0;
        utt.phones.push_back({utt.id, start, end, phones[p]});
      }
      const double word_end = static_cast<double>(utt.frame_phone.size()) * kStrideMs / 1000.0;
      utt.words.push_back({utt.id, word_start, word_end, numbered("w", w, 3)});
    }
    utts.push_back(std::move(utt));
  }
  return utts;
}

// Two phone-dependent tones plus a little noise, 320 samples per frame and an
// 80-sample tail so the mel front end yields exactly one frame per phone frame.
std::vector<float> synthesize(const Utterance& utt, Rng& rng) {
  const std::size_t n = utt.frame_phone.size() * kHopSamples + kTailSamples;
  std::vector<float> samples(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t f = std::min(i / kHopSamples, utt.frame_phone.size() - 1);
    const double p = static_cast<double>(utt.frame_phone[f]);
    const double t = static_cast<double>(i) / kSampleRate;
    const double f1 = 250.0 + 25.0 * p;
    const double f2 = 1000.0 + 60.0 * p;
    samples[i] = static_cast<float>(0.3 * std::sin(2 * std::numbers::pi * f1 * t) +
                                    0.2 * std::sin(2 * std::numbers::pi * f2 * t) + 0.02 * rng.normal());
  }
  return samples;
}

void write_labels(const std::vector<Utterance>& utts, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIoFailure, "cannot write " + path.string());
  for (const auto& u : utts) out << u.id << '\t' << numbered("spk", u.speaker, 1) << '\n';
}

}  // namespace

const std::vector<std::string>& synthetic_phone_set() {
  static const std::vector<std::string> phones = {
      "AA", "AE", "AH", "AO", "AW", "AY", "B",  "CH", "D",  "DH", "EH", "ER", "EY",
      "F",  "G",  "HH", "IH", "IY", "JH", "K",  "L",  "M",  "N",  "NG", "OW", "OY",
      "P",  "R",  "S",  "SH", "T",  "TH", "UH", "UW", "V",  "W",  "Y",  "Z",  "ZH"};
  return phones;
}

std::vector<double> planted_phone_profile(std::uint32_t num_layers, std::uint32_t peak_layer) {
  std::vector<double> a(num_layers + 1);
  for (std::uint32_t l = 0; l <= num_layers; ++l) {
    if (l <= peak_layer) {
      a[l] = peak_layer == 0 ? 1.0 : 0.1 + 0.9 * l / peak_layer;
    } else {
      a[l] = 1.0 - 0.8 * (l - peak_layer) / double(num_layers - peak_layer);
    }
  }
  return a;
}

std::vector<double> planted_acoustic_profile(std::uint32_t num_layers, std::uint32_t peak_layer) {
  std::vector<double> b(num_layers + 1);
  for (std::uint32_t l = 0; l <= num_layers; ++l) {
    const double span = l <= peak_layer ? peak_layer : num_layers - peak_layer;
    const double dist = l <= peak_layer ? double(peak_layer - l) : double(l - peak_layer);
    b[l] = span == 0 ? 1.0 : 0.1 + 0.9 * dist / span;
  }
  return b;
}

SyntheticDump write_synthetic_dump(const SyntheticSpec& spec, const fs::path& dir_in) {
  if (spec.num_layers == 0 || spec.peak_layer > spec.num_layers || spec.dim == 0 || spec.num_utterances == 0 ||
      spec.min_frames == 0 || spec.max_frames < spec.min_frames) {
    throw Error(ErrorCode::kInvalidConfig, "inconsistent synthetic dump parameters");
  }
  const fs::path dir = fs::absolute(dir_in);
  fs::create_directories(dir);
  Rng rng(derive_seed(spec.seed, "synthetic"));
  const auto utts = make_utterances(spec, rng);
  const bool with_audio = spec.write_audio || spec.kind == SyntheticKind::kMelCopy;
  const std::uint32_t num_layers = spec.num_layers;

  SyntheticDump dump;
  dump.manifest = dir / "manifest.json";
  dump.phone_alignments = dir / "phones.tsv";
  dump.word_alignments = dir / "words.tsv";
  dump.utterance_labels = dir / "speakers.tsv";

  Manifest m;
  m.num_layers = num_layers;
  m.frame_stride_ms = kStrideMs;
  m.sample_rate_hz = kSampleRate;
  m.base_dir = dir;
  m.alignments["phone"] = dump.phone_alignments;
  m.alignments["word"] = dump.word_alignments;

  std::vector<AlignmentRecord> phone_recs;
  std::vector<AlignmentRecord> word_recs;
  for (const auto& u : utts) {
    phone_recs.insert(phone_recs.end(), u.phones.begin(), u.phones.end());
    word_recs.insert(word_recs.end(), u.words.begin(), u.words.end());
  }
  write_alignments(make_alignment_table(std::move(phone_recs)), dump.phone_alignments);
  write_alignments(make_alignment_table(std::move(word_recs)), dump.word_alignments);
  write_labels(utts, dump.utterance_labels);

  std::vector<std::vector<float>> audio(utts.size());
  if (with_audio) {
    fs::create_directories(dir / "audio");
    Rng audio_rng(derive_seed(spec.seed, "synthetic-audio"));
    for (std::size_t u = 0; u < utts.size(); ++u) {
      audio[u] = synthesize(utts[u], audio_rng);
      write_wav(dir / "audio" / (utts[u].id + ".wav"), audio[u], kSampleRate);
    }
  }

  std::size_t total = 0;
  for (const auto& u : utts) total += u.frame_phone.size();

  std::vector<Eigen::MatrixXd> layers(num_layers + 1);
  if (spec.kind == SyntheticKind::kMelCopy) {
    m.model_name = "melcopy-" + std::to_string(num_layers);
    MelConfig cfg;
    Eigen::MatrixXd mel(static_cast<Eigen::Index>(total), cfg.n_mels);
    Eigen::Index row = 0;
    for (std::size_t u = 0; u < utts.size(); ++u) {
      const RepMatrix feats = mel_filterbank(audio[u], kSampleRate, cfg);
      if (feats.rows != utts[u].frame_phone.size()) {
        throw Error(ErrorCode::kFrameCountMismatch, "synthetic audio produced an unexpected frame count");
      }
      mel.middleRows(row, feats.rows) = feats.to_eigen();
      row += feats.rows;
    }
    for (auto& l : layers) l = mel;
  } else {
    m.model_name = "planted-" + std::to_string(num_layers);
    const auto a = planted_phone_profile(num_layers, spec.peak_layer);
    const auto b = planted_acoustic_profile(num_layers, spec.peak_layer);
    dump.phone_profile = a;
    dump.acoustic_profile = b;
    const Eigen::Index d = spec.dim;
    const Eigen::Index k = spec.acoustic_dim;
    const auto n_phones = static_cast<Eigen::Index>(synthetic_phone_set().size());
    const Eigen::MatrixXd phone_embed = gaussian(rng, n_phones, d);
    const Eigen::MatrixXd acoustic_map = gaussian(rng, k, d);
    const Eigen::MatrixXd speaker_offset = gaussian(rng, kNumSpeakers, k, 0.15);
    const auto n = static_cast<Eigen::Index>(total);

    Eigen::MatrixXd phone_part(n, d);
    Eigen::MatrixXd acoustic(n, k);
    Eigen::Index row = 0;
    for (const auto& u : utts) {
      for (std::size_t p : u.frame_phone) {
        phone_part.row(row) = phone_embed.row(static_cast<Eigen::Index>(p));
        for (Eigen::Index j = 0; j < k; ++j) {
          acoustic(row, j) = rng.normal() + speaker_offset(static_cast<Eigen::Index>(u.speaker), j);
        }
        ++row;
      }
    }
    const Eigen::MatrixXd acoustic_part = acoustic * acoustic_map;
    const Eigen::MatrixXd shared = gaussian(rng, n, d, spec.shared_noise);
    for (std::uint32_t l = 0; l <= num_layers; ++l) {
      const Eigen::MatrixXd own = gaussian(rng, n, d, l == 0 ? spec.shared_noise : spec.independent_noise);
      layers[l] = a[l] * phone_part + b[l] * acoustic_part + own;
      if (l > 0) layers[l] += shared;
    }
  }

  // In the planted dump layer 0 carries one extra trailing frame per
  // utterance, as a convolutional front end often does; loaders truncate it.
  const bool extra_frame = spec.kind == SyntheticKind::kPlanted;
  for (std::uint32_t l = 0; l <= num_layers; ++l) {
    Eigen::MatrixXd out = layers[l];
    if (l == 0 && extra_frame) {
      out.resize(static_cast<Eigen::Index>(total + utts.size()), layers[l].cols());
      Eigen::Index src = 0;
      Eigen::Index dst = 0;
      for (const auto& u : utts) {
        const auto len = static_cast<Eigen::Index>(u.frame_phone.size());
        out.middleRows(dst, len) = layers[l].middleRows(src, len);
        out.row(dst + len) = layers[l].row(src + len - 1);
        src += len;
        dst += len + 1;
      }
    }
    const fs::path path = dir / numbered("layer_", l, 2).append(".lrep");
    write_rep(RepMatrix::from_eigen(out, l, Granularity::kFrame), path);
    m.layers.push_back({l, Granularity::kFrame, path});
  }

  for (const auto& u : utts) {
    UtteranceEntry e;
    e.id = u.id;
    const auto len = static_cast<std::uint32_t>(u.frame_phone.size());
    if (extra_frame) {
      e.frames.assign(num_layers + 1, len);
      e.frames[0] = len + 1;
    } else {
      e.frames = {len};
    }
    if (with_audio) e.audio = dir / "audio" / (u.id + ".wav");
    m.utterances.push_back(std::move(e));
  }
  save_manifest(m, dump.manifest);
  return dump;
}

}  // namespace layerscope
