#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace layerscope {

struct ProbeConfig {
  double step = 0.1;
  double l2 = 1e-4;
  double tol = 1e-6;  // stop when the full gradient norm falls below this
  std::size_t max_iters = 5000;
  double min_step = 1e-12;  // give up halving below this
};

struct LinearProbe {
  Eigen::MatrixXd weights;  // d x C
  Eigen::VectorXd bias;     // C
  std::vector<std::string> classes;

  std::size_t num_classes() const { return static_cast<std::size_t>(weights.cols()); }
};

struct TrainingTrace {
  std::vector<double> losses;  // loss after every accepted step, starting at initialization
  std::size_t iterations = 0;
  std::size_t rejected_steps = 0;
  bool converged = false;
};

// Mean cross-entropy plus (l2 / 2) * ||W||^2; the bias is not penalized.
// Gradients are written when the output pointers are non-null.
double probe_loss(const Eigen::Ref<const Eigen::MatrixXd>& x, std::span<const std::size_t> labels,
                  const Eigen::Ref<const Eigen::MatrixXd>& weights, const Eigen::Ref<const Eigen::VectorXd>& bias,
                  double l2, Eigen::MatrixXd* grad_weights = nullptr, Eigen::VectorXd* grad_bias = nullptr);

// Multinomial logistic regression by full-batch gradient descent from zero,
// halving the step whenever a step would raise the loss.
LinearProbe train_probe(const Eigen::Ref<const Eigen::MatrixXd>& x, std::span<const std::size_t> labels,
                        std::size_t num_classes, const ProbeConfig& cfg = {}, TrainingTrace* trace = nullptr);

// Argmax predictions; ties go to the lowest class index.
std::vector<std::size_t> predict(const LinearProbe& probe, const Eigen::Ref<const Eigen::MatrixXd>& x);
double eval_probe(const LinearProbe& probe, const Eigen::Ref<const Eigen::MatrixXd>& x,
                  std::span<const std::size_t> labels);

struct LayerWeighting {
  Eigen::VectorXd logits;
  Eigen::VectorXd weights;  // softmax(logits)
};

Eigen::VectorXd softmax(const Eigen::Ref<const Eigen::VectorXd>& logits);

// sum_l w_l * layers[l]
Eigen::MatrixXd combine_layers(std::span<const Eigen::MatrixXd> layers, const Eigen::Ref<const Eigen::VectorXd>& weights);

struct WeightedSumProbe {
  LayerWeighting weighting;
  LinearProbe probe;
};

// Joint gradient descent on the layer logits and the probe, from uniform
// logits and a zero probe.
WeightedSumProbe train_weighted_sum(std::span<const Eigen::MatrixXd> layers, std::span<const std::size_t> labels,
                                    std::size_t num_classes, const ProbeConfig& cfg = {},
                                    TrainingTrace* trace = nullptr);
double eval_weighted_sum(const WeightedSumProbe& model, std::span<const Eigen::MatrixXd> layers,
                         std::span<const std::size_t> labels);

// Pearson correlation of average ranks.
double spearman(std::span<const double> a, std::span<const double> b);
std::vector<double> average_ranks(std::span<const double> values);

enum class CurveKind { kCcaMel, kCcaPhone, kCcaWord, kCcaIntra, kTaskAccuracy };

std::string_view curve_kind_name(CurveKind kind) noexcept;

struct LayerCurve {
  std::vector<std::uint32_t> layers;  // ascending
  std::vector<double> values;
  CurveKind kind = CurveKind::kTaskAccuracy;
  std::string model_name;
};

// Spearman over the layers both curves cover. Error-rate task curves are
// mapped v -> 100 - v first so higher is better on both sides.
double correlate_curves(const LayerCurve& analysis, const LayerCurve& task, bool task_is_error_rate);

}  // namespace layerscope
