#pragma once

#include "layerscope/cca.hpp"
#include "layerscope/features.hpp"
#include "layerscope/tensor_io.hpp"

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace layerscope {

inline constexpr std::size_t kNumSampleSets = 3;
inline constexpr std::size_t kNumSplits = 10;
inline constexpr std::size_t kNumRotations = 3;
inline constexpr std::size_t kRunsPerScore = kNumSampleSets * kNumRotations;

struct SampleSet {
  std::vector<std::size_t> indices;  // ascending, unique
  std::uint64_t seed = 0;
  std::size_t target_size = 0;
};

struct SampleTargets {
  std::size_t utterances = 500;
  std::size_t segments = 7000;
};

// Frame granularity: pool_labels[i] is the utterance owning frame i; whole
// utterances are drawn uniformly up to targets.utterances.
// Phone / word granularity: pool_labels[i] is the label id of segment i;
// stratified draw proportional to frequency with a floor of one per label.
// Set s uses seed + s.
std::array<SampleSet, kNumSampleSets> draw_samples(std::span<const std::size_t> pool_labels, Granularity granularity,
                                                   std::uint64_t seed, const SampleTargets& targets = {},
                                                   std::optional<std::size_t> vocab_size = std::nullopt);

struct SplitPlan {
  std::array<std::vector<std::size_t>, kNumSplits> splits;
  std::size_t rotation = 0;
  std::size_t test_split = 0;
  std::size_t dev_split = 1;

  const std::vector<std::size_t>& test() const { return splits[test_split]; }
  const std::vector<std::size_t>& dev() const { return splits[dev_split]; }
  std::vector<std::size_t> train() const;
  std::vector<std::size_t> train_splits() const;
};

// Seeded shuffle, round-robin into ten splits; rotation r tests on split 3r
// and tunes on split 3r + 1.
SplitPlan make_splits(const SampleSet& sample, std::size_t rotation);

using EpsilonGrid = std::vector<CcaConfig>;

// Cross product of {0, 1e-8, 1e-6, 1e-4, 1e-2} for both views.
EpsilonGrid default_epsilon_grid();
EpsilonGrid epsilon_grid(std::span<const double> eps_x, std::span<const double> eps_y);

struct TuneResult {
  CcaConfig config;
  double dev_score = 0.0;
  std::vector<double> grid_scores;  // NaN where the solve failed
  std::size_t skipped = 0;
  CcaProjection projection;  // fitted with the selected config
};

// True when (candidate, score) beats the current best: higher score first, then
// the larger total epsilon, then the larger eps_x.
bool prefer_tuning_point(const CcaConfig& candidate, double score, const CcaConfig& best, double best_score);

// Argmax of dev PWCCA over the grid; ties go to the larger total epsilon.
TuneResult tune_epsilons(const CrossMoments& train, const CrossMoments& dev, const EpsilonGrid& grid,
                         WeightNorm norm = WeightNorm::kL2);
TuneResult tune_epsilons(const Eigen::Ref<const Eigen::MatrixXd>& x_train,
                         const Eigen::Ref<const Eigen::MatrixXd>& y_train,
                         const Eigen::Ref<const Eigen::MatrixXd>& x_dev,
                         const Eigen::Ref<const Eigen::MatrixXd>& y_dev, const EpsilonGrid& grid,
                         WeightNorm norm = WeightNorm::kL2);

struct RunRecord {
  std::size_t sample_set = 0;
  std::size_t rotation = 0;
  double score = 0.0;
  double dev_score = 0.0;
  CcaConfig config;
  std::size_t n_train = 0;
  std::size_t n_dev = 0;
  std::size_t n_test = 0;
};

struct AggregateScore {
  std::vector<RunRecord> runs;  // sample-set major, rotation minor
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation

  std::vector<double> per_run() const;
};

// Mean/std over the runs in canonical (set, rotation) order, so the result does
// not depend on completion order.
AggregateScore aggregate(std::vector<RunRecord> runs);

// Nine train/dev/test runs of one (X, Y) pairing. Rows of x and y are the pool
// that sample indices refer to.
AggregateScore run_protocol(const Eigen::Ref<const Eigen::MatrixXd>& x, const Eigen::Ref<const Eigen::MatrixXd>& y,
                            const std::array<SampleSet, kNumSampleSets>& samples, const EpsilonGrid& grid,
                            std::size_t workers = 1, WeightNorm norm = WeightNorm::kL2);

enum class AnalysisTarget { kIntraLayer0, kMel, kPhone, kWord };

std::string_view target_name(AnalysisTarget t) noexcept;  // "intra", "mel", "phone", "word"
AnalysisTarget parse_target(std::string_view name);

struct AnalysisConfig {
  std::uint64_t seed = 0;
  EpsilonGrid grid = default_epsilon_grid();
  SampleTargets sample_targets;
  std::size_t workers = 1;
  WeightNorm weight_norm = WeightNorm::kL2;
  std::optional<MelConfig> mel;  // hop defaults to the manifest frame stride
  std::map<std::string, std::filesystem::path> alignments;  // overrides the manifest's
  std::optional<std::filesystem::path> audio_dir;
  std::map<std::string, std::size_t> expected_vocab;
};

struct LayerScore {
  std::uint32_t layer = 0;
  AggregateScore score;
};

struct AnalysisCurve {
  AnalysisTarget target = AnalysisTarget::kPhone;
  std::string model_name;
  std::vector<LayerScore> layers;
  std::size_t pool_size = 0;
  std::size_t dropped_segments = 0;

  std::vector<double> means() const;
};

// Full 3 x 3 protocol for every layer (view X = layer, view Y = target view).
// The intra target compares layers 1..L with layer 0.
AnalysisCurve run_cca_analysis(const Manifest& manifest, AnalysisTarget target, const AnalysisConfig& config);

// Deterministic parallel-for used by the protocol's work queue.
void parallel_for(std::size_t count, std::size_t workers, const std::function<void(std::size_t)>& task);

}  // namespace layerscope
