#include "layerscope/protocol.hpp"

#include "layerscope/error.hpp"
#include "layerscope/log.hpp"
#include "layerscope/rng.hpp"
#include "layerscope/wav.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <numeric>
#include <set>
#include <thread>

namespace layerscope {
namespace {

using Eigen::MatrixXd;

std::vector<std::size_t> draw_utterances(std::span<const std::size_t> owners, std::size_t target, Rng& rng) {
  std::vector<std::size_t> utts(owners.begin(), owners.end());
  std::sort(utts.begin(), utts.end());
  utts.erase(std::unique(utts.begin(), utts.end()), utts.end());
  if (utts.size() > target) {
    rng.shuffle(utts);
    utts.resize(target);
  }
  const std::set<std::size_t> picked(utts.begin(), utts.end());
  std::vector<std::size_t> indices;
  for (std::size_t i = 0; i < owners.size(); ++i) {
    if (picked.count(owners[i])) indices.push_back(i);
  }
  return indices;
}

// Per-label quotas proportional to frequency, at least one per present label,
// summing to exactly min(target, pool size).
std::vector<std::size_t> stratified_quotas(const std::vector<std::size_t>& counts, std::size_t target) {
  const std::size_t total = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
  std::vector<std::size_t> quota(counts.size(), 0);
  if (total <= target) return counts;

  std::vector<double> exact(counts.size(), 0.0);
  std::size_t present = 0;
  for (std::size_t l = 0; l < counts.size(); ++l) {
    if (counts[l] == 0) continue;
    ++present;
    exact[l] = static_cast<double>(target) * static_cast<double>(counts[l]) / static_cast<double>(total);
    quota[l] = std::min(counts[l], std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(exact[l]))));
  }
  if (present > target) {
    // More labels than slots: keep the most frequent ones.
    std::vector<std::size_t> order(counts.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return counts[a] > counts[b]; });
    std::fill(quota.begin(), quota.end(), 0);
    for (std::size_t i = 0; i < target; ++i) quota[order[i]] = 1;
    return quota;
  }
  std::size_t sum = std::accumulate(quota.begin(), quota.end(), std::size_t{0});
  while (sum > target) {
    const auto it = std::max_element(quota.begin(), quota.end());
    --*it;
    --sum;
  }
  if (sum < target) {
    std::vector<std::size_t> order(counts.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) {
      return exact[a] - std::floor(exact[a]) > exact[b] - std::floor(exact[b]);
    });
    while (sum < target) {
      bool progressed = false;
      for (const auto l : order) {
        if (sum == target) break;
        if (quota[l] < counts[l]) {
          ++quota[l];
          ++sum;
          progressed = true;
        }
      }
      if (!progressed) break;
    }
  }
  return quota;
}

std::vector<std::size_t> draw_stratified(std::span<const std::size_t> labels, std::size_t vocab_size,
                                         std::size_t target, Rng& rng) {
  std::vector<std::vector<std::size_t>> by_label(vocab_size);
  for (std::size_t i = 0; i < labels.size(); ++i) by_label[labels[i]].push_back(i);
  std::vector<std::size_t> counts(vocab_size);
  for (std::size_t l = 0; l < vocab_size; ++l) counts[l] = by_label[l].size();
  const auto quota = stratified_quotas(counts, target);

  std::vector<std::size_t> indices;
  for (std::size_t l = 0; l < vocab_size; ++l) {
    auto& members = by_label[l];
    if (quota[l] < members.size()) {
      rng.shuffle(members);
      members.resize(quota[l]);
    }
    indices.insert(indices.end(), members.begin(), members.end());
  }
  std::sort(indices.begin(), indices.end());
  return indices;
}

MatrixXd gather_rows(const Eigen::Ref<const MatrixXd>& m, const std::vector<std::size_t>& rows) {
  MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

CrossMoments moments_of_rows(const Eigen::Ref<const MatrixXd>& x, const Eigen::Ref<const MatrixXd>& y,
                             const std::vector<std::size_t>& rows) {
  const MatrixXd xs = gather_rows(x, rows);
  const MatrixXd ys = gather_rows(y, rows);
  if (rows.size() >= 2) return cross_moments(xs, ys);
  CrossMoments m;
  m.n = static_cast<Eigen::Index>(rows.size());
  m.mean_x = rows.empty() ? Eigen::VectorXd::Zero(x.cols()) : Eigen::VectorXd(xs.row(0).transpose());
  m.mean_y = rows.empty() ? Eigen::VectorXd::Zero(y.cols()) : Eigen::VectorXd(ys.row(0).transpose());
  m.sxx = MatrixXd::Zero(x.cols(), x.cols());
  m.syy = MatrixXd::Zero(y.cols(), y.cols());
  m.sxy = MatrixXd::Zero(x.cols(), y.cols());
  return m;
}

}  // namespace

std::array<SampleSet, kNumSampleSets> draw_samples(std::span<const std::size_t> pool_labels, Granularity granularity,
                                                   std::uint64_t seed, const SampleTargets& targets,
                                                   std::optional<std::size_t> vocab_size) {
  if (pool_labels.empty()) throw Error(ErrorCode::kInsufficientData, "sample pool is empty");

  std::size_t vocab = 0;
  if (granularity == Granularity::kPhone || granularity == Granularity::kWord) {
    const std::size_t max_label = *std::max_element(pool_labels.begin(), pool_labels.end());
    vocab = vocab_size.value_or(max_label + 1);
    if (max_label >= vocab) throw Error(ErrorCode::kUnknownLabel, "label id outside vocab");
    std::vector<bool> seen(vocab, false);
    for (const auto l : pool_labels) seen[l] = true;
    const auto missing = static_cast<std::size_t>(std::count(seen.begin(), seen.end(), false));
    if (missing > 0) {
      if (static_cast<double>(missing) > 0.1 * static_cast<double>(vocab)) {
        throw Error(ErrorCode::kInsufficientData, std::to_string(missing) + " of " + std::to_string(vocab) +
                                                      " labels have no instances");
      }
      log().warn("{} of {} labels have no instances and are excluded", missing, vocab);
    }
  }

  std::array<SampleSet, kNumSampleSets> sets;
  for (std::size_t s = 0; s < kNumSampleSets; ++s) {
    SampleSet& set = sets[s];
    set.seed = seed + s;
    Rng rng(derive_seed(set.seed, "sampling"));
    if (granularity == Granularity::kFrame || granularity == Granularity::kUtterance) {
      set.target_size = granularity == Granularity::kFrame ? targets.utterances : targets.segments;
      if (granularity == Granularity::kFrame) {
        set.indices = draw_utterances(pool_labels, targets.utterances, rng);
      } else {
        std::vector<std::size_t> all(pool_labels.size());
        std::iota(all.begin(), all.end(), 0);
        if (all.size() > targets.segments) {
          rng.shuffle(all);
          all.resize(targets.segments);
          std::sort(all.begin(), all.end());
        }
        set.indices = std::move(all);
      }
    } else {
      set.target_size = targets.segments;
      set.indices = draw_stratified(pool_labels, vocab, targets.segments, rng);
    }
  }
  return sets;
}

std::vector<std::size_t> SplitPlan::train_splits() const {
  std::vector<std::size_t> out;
  for (std::size_t s = 0; s < kNumSplits; ++s) {
    if (s != test_split && s != dev_split) out.push_back(s);
  }
  return out;
}

std::vector<std::size_t> SplitPlan::train() const {
  std::vector<std::size_t> out;
  for (const auto s : train_splits()) out.insert(out.end(), splits[s].begin(), splits[s].end());
  std::sort(out.begin(), out.end());
  return out;
}

SplitPlan make_splits(const SampleSet& sample, std::size_t rotation) {
  if (sample.indices.size() < kNumSplits) {
    throw Error(ErrorCode::kTooFewInstances,
                "need at least " + std::to_string(kNumSplits) + " instances, have " + std::to_string(sample.indices.size()));
  }
  if (rotation >= kNumRotations) throw Error(ErrorCode::kInvalidConfig, "rotation must be 0, 1 or 2");
  std::vector<std::size_t> order = sample.indices;
  Rng rng(derive_seed(sample.seed, "splits"));
  rng.shuffle(order);

  SplitPlan plan;
  plan.rotation = rotation;
  plan.test_split = (3 * rotation) % kNumSplits;
  plan.dev_split = (3 * rotation + 1) % kNumSplits;
  for (std::size_t i = 0; i < order.size(); ++i) plan.splits[i % kNumSplits].push_back(order[i]);
  for (auto& s : plan.splits) std::sort(s.begin(), s.end());
  return plan;
}

EpsilonGrid epsilon_grid(std::span<const double> eps_x, std::span<const double> eps_y) {
  EpsilonGrid grid;
  for (const double ex : eps_x) {
    for (const double ey : eps_y) grid.push_back({ex, ey});
  }
  return grid;
}

EpsilonGrid default_epsilon_grid() {
  static constexpr std::array<double, 5> kValues = {0.0, 1e-8, 1e-6, 1e-4, 1e-2};
  return epsilon_grid(kValues, kValues);
}

bool prefer_tuning_point(const CcaConfig& candidate, double score, const CcaConfig& best, double best_score) {
  if (score > best_score) return true;
  if (score < best_score) return false;
  const double a = candidate.eps_x + candidate.eps_y;
  const double b = best.eps_x + best.eps_y;
  if (a != b) return a > b;
  return candidate.eps_x > best.eps_x;
}

TuneResult tune_epsilons(const CrossMoments& train, const CrossMoments& dev, const EpsilonGrid& grid, WeightNorm norm) {
  if (grid.empty()) throw Error(ErrorCode::kInvalidConfig, "epsilon grid is empty");
  const CcaSolver solver(train);
  TuneResult out;
  out.grid_scores.assign(grid.size(), std::numeric_limits<double>::quiet_NaN());
  bool found = false;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    try {
      CcaProjection proj = solver.solve(grid[g]);
      const double score = score_projection(proj, train, dev, norm).pwcca;
      out.grid_scores[g] = score;
      if (!found || prefer_tuning_point(grid[g], score, out.config, out.dev_score)) {
        found = true;
        out.config = grid[g];
        out.dev_score = score;
        out.projection = std::move(proj);
      }
    } catch (const Error& e) {
      ++out.skipped;
      log().warn("epsilon ({}, {}) skipped: {}", grid[g].eps_x, grid[g].eps_y, e.what());
    }
  }
  if (!found) throw Error(ErrorCode::kAllGridPointsFailed, "no epsilon pair produced a solution");
  return out;
}

TuneResult tune_epsilons(const Eigen::Ref<const MatrixXd>& x_train, const Eigen::Ref<const MatrixXd>& y_train,
                         const Eigen::Ref<const MatrixXd>& x_dev, const Eigen::Ref<const MatrixXd>& y_dev,
                         const EpsilonGrid& grid, WeightNorm norm) {
  return tune_epsilons(cross_moments(x_train, y_train), cross_moments(x_dev, y_dev), grid, norm);
}

std::vector<double> AggregateScore::per_run() const {
  std::vector<double> out;
  out.reserve(runs.size());
  for (const auto& r : runs) out.push_back(r.score);
  return out;
}

AggregateScore aggregate(std::vector<RunRecord> runs) {
  std::sort(runs.begin(), runs.end(), [](const RunRecord& a, const RunRecord& b) {
    return std::tie(a.sample_set, a.rotation) < std::tie(b.sample_set, b.rotation);
  });
  AggregateScore out;
  out.runs = std::move(runs);
  if (out.runs.empty()) return out;
  double sum = 0.0;
  for (const auto& r : out.runs) sum += r.score;
  out.mean = sum / static_cast<double>(out.runs.size());
  if (out.runs.size() > 1) {
    double ss = 0.0;
    for (const auto& r : out.runs) ss += (r.score - out.mean) * (r.score - out.mean);
    out.std = std::sqrt(ss / static_cast<double>(out.runs.size() - 1));
  }
  return out;
}

void parallel_for(std::size_t count, std::size_t workers, const std::function<void(std::size_t)>& task) {
  workers = std::max<std::size_t>(1, std::min(workers, count));
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) task(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          task(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

AggregateScore run_protocol(const Eigen::Ref<const MatrixXd>& x, const Eigen::Ref<const MatrixXd>& y,
                            const std::array<SampleSet, kNumSampleSets>& samples, const EpsilonGrid& grid,
                            std::size_t workers, WeightNorm norm) {
  if (x.rows() != y.rows()) throw Error(ErrorCode::kRowCountMismatch, "views have different pool sizes");

  // Splits do not depend on the rotation, so moments are computed per split
  // once and merged into each rotation's training set.
  std::array<SplitPlan, kNumSampleSets> plans;
  for (std::size_t s = 0; s < kNumSampleSets; ++s) plans[s] = make_splits(samples[s], 0);

  std::vector<CrossMoments> split_moments(kNumSampleSets * kNumSplits);
  parallel_for(split_moments.size(), workers, [&](std::size_t task) {
    const std::size_t s = task / kNumSplits;
    split_moments[task] = moments_of_rows(x, y, plans[s].splits[task % kNumSplits]);
  });

  std::vector<RunRecord> runs(kRunsPerScore);
  parallel_for(kRunsPerScore, workers, [&](std::size_t task) {
    const std::size_t s = task / kNumRotations;
    const std::size_t r = task % kNumRotations;
    SplitPlan plan = plans[s];
    plan.rotation = r;
    plan.test_split = (3 * r) % kNumSplits;
    plan.dev_split = (3 * r + 1) % kNumSplits;

    const auto train_ids = plan.train_splits();
    const std::set<std::size_t> test_rows(plan.test().begin(), plan.test().end());
    for (const auto sid : train_ids) {
      for (const auto i : plan.splits[sid]) {
        if (test_rows.count(i)) throw std::logic_error("test split intersects a training split");
      }
    }
    for (const auto i : plan.dev()) {
      if (test_rows.count(i)) throw std::logic_error("test split intersects the dev split");
    }

    CrossMoments train = split_moments[s * kNumSplits + train_ids.front()];
    for (std::size_t t = 1; t < train_ids.size(); ++t) {
      train = merge_moments(train, split_moments[s * kNumSplits + train_ids[t]]);
    }
    const CrossMoments& dev = split_moments[s * kNumSplits + plan.dev_split];
    const CrossMoments& test = split_moments[s * kNumSplits + plan.test_split];

    const TuneResult tuned = tune_epsilons(train, dev, grid, norm);
    RunRecord& rec = runs[task];
    rec.sample_set = s;
    rec.rotation = r;
    rec.config = tuned.config;
    rec.dev_score = tuned.dev_score;
    rec.score = score_projection(tuned.projection, train, test, norm).pwcca;
    rec.n_train = static_cast<std::size_t>(train.n);
    rec.n_dev = static_cast<std::size_t>(dev.n);
    rec.n_test = static_cast<std::size_t>(test.n);
  });
  return aggregate(std::move(runs));
}

std::string_view target_name(AnalysisTarget t) noexcept {
  switch (t) {
    case AnalysisTarget::kIntraLayer0: return "intra";
    case AnalysisTarget::kMel: return "mel";
    case AnalysisTarget::kPhone: return "phone";
    case AnalysisTarget::kWord: return "word";
  }
  return "intra";
}

AnalysisTarget parse_target(std::string_view name) {
  if (name == "intra" || name == "intra_layer0") return AnalysisTarget::kIntraLayer0;
  if (name == "mel") return AnalysisTarget::kMel;
  if (name == "phone") return AnalysisTarget::kPhone;
  if (name == "word") return AnalysisTarget::kWord;
  throw Error(ErrorCode::kInvalidConfig, "unknown analysis target '" + std::string(name) + "'");
}

std::vector<double> AnalysisCurve::means() const {
  std::vector<double> out;
  for (const auto& l : layers) out.push_back(l.score.mean);
  return out;
}

namespace {

std::filesystem::path audio_path(const Manifest& manifest, const AnalysisConfig& config, const UtteranceEntry& u) {
  if (u.audio) return *u.audio;
  if (config.audio_dir) return *config.audio_dir / (u.id + ".wav");
  if (manifest.audio_dir) return *manifest.audio_dir / (u.id + ".wav");
  throw Error(ErrorCode::kMissingInput, "no audio configured for utterance '" + u.id + "'");
}

std::vector<std::uint32_t> analysis_layers(const Manifest& manifest, AnalysisTarget target) {
  std::vector<std::uint32_t> layers;
  for (std::uint32_t l = target == AnalysisTarget::kIntraLayer0 ? 1 : 0; l <= manifest.num_layers; ++l) {
    if (manifest.find_layer(l, Granularity::kFrame) != nullptr) layers.push_back(l);
  }
  if (layers.empty()) throw Error(ErrorCode::kMissingInput, "no frame-granularity layers to analyze");
  return layers;
}

}  // namespace

AnalysisCurve run_cca_analysis(const Manifest& manifest, AnalysisTarget target, const AnalysisConfig& config) {
  const FrameLayout layout = frame_layout(manifest);
  const auto layers = analysis_layers(manifest, target);

  AnalysisCurve curve;
  curve.target = target;
  curve.model_name = manifest.model_name;

  // Rows of the pool inside the truncated frame matrix (frame targets only).
  std::vector<std::size_t> pool_rows;
  std::vector<std::size_t> pool_labels;
  MatrixXd y;
  Granularity granularity = Granularity::kFrame;
  std::optional<std::size_t> vocab_size;
  std::optional<AlignmentTable> table;

  switch (target) {
    case AnalysisTarget::kIntraLayer0: {
      if (manifest.find_layer(0, Granularity::kFrame) == nullptr) {
        throw Error(ErrorCode::kMissingInput, "intra analysis needs layer 0 frames");
      }
      y = load_frame_layer(manifest, layout, 0).to_eigen();
      const auto owner = layout.frame_owner();
      pool_labels.assign(owner.begin(), owner.end());
      pool_rows.resize(layout.total_frames);
      std::iota(pool_rows.begin(), pool_rows.end(), 0);
      break;
    }
    case AnalysisTarget::kMel: {
      if (manifest.utterances.empty()) throw Error(ErrorCode::kMissingInput, "mel analysis needs an utterance list");
      MelConfig mel = config.mel.value_or(MelConfig{});
      if (!config.mel) mel.hop_ms = manifest.frame_stride_ms;
      mel.sample_rate_hz = manifest.sample_rate_hz;
      if (mel.hop_ms != manifest.frame_stride_ms) {
        log().warn("mel hop {} ms differs from frame stride {} ms; pairing by nearest frame center", mel.hop_ms,
                   manifest.frame_stride_ms);
      }
      std::vector<MatrixXd> blocks;
      std::size_t rows = 0;
      for (std::size_t u = 0; u < manifest.utterances.size(); ++u) {
        const Waveform wav = read_wav(audio_path(manifest, config, manifest.utterances[u]));
        const MatrixXd feats = mel_filterbank(wav.samples, wav.sample_rate, mel).to_eigen();
        const auto pairs = pair_frames(layout.counts[u], manifest.frame_stride_ms,
                                       static_cast<std::uint32_t>(feats.rows()), mel.hop_ms);
        MatrixXd block(static_cast<Eigen::Index>(pairs.size()), feats.cols());
        for (std::size_t p = 0; p < pairs.size(); ++p) {
          pool_rows.push_back(layout.offsets[u] + pairs[p].first);
          pool_labels.push_back(u);
          block.row(static_cast<Eigen::Index>(p)) = feats.row(pairs[p].second);
        }
        rows += pairs.size();
        blocks.push_back(std::move(block));
      }
      y.resize(static_cast<Eigen::Index>(rows), mel.n_mels);
      Eigen::Index at = 0;
      for (const auto& b : blocks) {
        y.middleRows(at, b.rows()) = b;
        at += b.rows();
      }
      break;
    }
    case AnalysisTarget::kPhone:
    case AnalysisTarget::kWord: {
      const std::string kind(target_name(target));
      granularity = target == AnalysisTarget::kPhone ? Granularity::kPhone : Granularity::kWord;
      std::filesystem::path path;
      if (const auto it = config.alignments.find(kind); it != config.alignments.end()) {
        path = it->second;
      } else if (const auto jt = manifest.alignments.find(kind); jt != manifest.alignments.end()) {
        path = jt->second;
      } else {
        throw Error(ErrorCode::kMissingInput, kind + " analysis needs " + kind + " alignments");
      }
      table = read_alignments(path);
      if (const auto it = config.expected_vocab.find(kind); it != config.expected_vocab.end()) {
        if (table->label_vocab.size() != it->second) {
          throw Error(ErrorCode::kVocabSizeMismatch, kind + " vocab has " + std::to_string(table->label_vocab.size()) +
                                                         " labels, expected " + std::to_string(it->second));
        }
      }
      vocab_size = table->label_vocab.size();
      break;
    }
  }

  std::optional<std::array<SampleSet, kNumSampleSets>> samples;
  if (!table) {
    samples = draw_samples(pool_labels, granularity, config.seed, config.sample_targets);
    curve.pool_size = pool_rows.size();
  }

  for (const auto layer : layers) {
    MatrixXd x;
    if (table) {
      const PooledSegments pooled = pool_segments(load_frame_layer(manifest, layout, layer), layout, *table,
                                                  manifest.frame_stride_ms);
      if (!samples) {
        pool_labels = pooled.labels;
        y = onehot(pooled.labels, *vocab_size);
        samples = draw_samples(pool_labels, granularity, config.seed, config.sample_targets, vocab_size);
        curve.pool_size = pooled.labels.size();
        curve.dropped_segments = pooled.dropped;
      } else if (pooled.labels != pool_labels) {
        throw std::logic_error("segment pooling differs across layers");
      }
      x = pooled.matrix.to_eigen();
    } else {
      const MatrixXd frames = load_frame_layer(manifest, layout, layer).to_eigen();
      x = gather_rows(frames, pool_rows);
    }
    log().info("{} analysis: layer {} ({} x {} vs {} x {})", target_name(target), layer, x.rows(), x.cols(),
               y.rows(), y.cols());
    curve.layers.push_back({layer, run_protocol(x, y, *samples, config.grid, config.workers, config.weight_norm)});
  }
  return curve;
}

}  // namespace layerscope
