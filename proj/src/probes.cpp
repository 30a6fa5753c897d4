#include "layerscope/probes.hpp"

#include "layerscope/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace layerscope {
namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

void check_labels(std::span<const std::size_t> labels, Index rows, std::size_t num_classes) {
  if (labels.size() != static_cast<std::size_t>(rows)) {
    throw Error(ErrorCode::kDimensionMismatch,
                std::to_string(labels.size()) + " labels for " + std::to_string(rows) + " rows");
  }
  for (const auto l : labels) {
    if (l >= num_classes) throw Error(ErrorCode::kUnknownLabel, "label id " + std::to_string(l) + " out of range");
  }
}

void require_two_classes(std::span<const std::size_t> labels, std::size_t num_classes) {
  if (num_classes < 2) throw Error(ErrorCode::kSingleClass, "probe needs at least two classes");
  if (labels.empty()) throw Error(ErrorCode::kSingleClass, "no training instances");
  const bool single = std::all_of(labels.begin(), labels.end(), [&](auto l) { return l == labels.front(); });
  if (single) throw Error(ErrorCode::kSingleClass, "all training instances share one label");
}

// Row-wise softmax of logits in place; returns the mean negative log likelihood.
double softmax_nll(MatrixXd& scores, std::span<const std::size_t> labels) {
  double nll = 0.0;
  for (Index i = 0; i < scores.rows(); ++i) {
    auto row = scores.row(i);
    const double peak = row.maxCoeff();
    row.array() -= peak;
    const double log_z = std::log(row.array().exp().sum());
    nll -= row(static_cast<Index>(labels[static_cast<std::size_t>(i)])) - log_z;
    row = (row.array() - log_z).exp();
  }
  return nll / static_cast<double>(scores.rows());
}

}  // namespace

double probe_loss(const Eigen::Ref<const MatrixXd>& x, std::span<const std::size_t> labels,
                  const Eigen::Ref<const MatrixXd>& weights, const Eigen::Ref<const VectorXd>& bias, double l2,
                  MatrixXd* grad_weights, VectorXd* grad_bias) {
  MatrixXd probs = x * weights;
  probs.rowwise() += bias.transpose();
  const double loss = softmax_nll(probs, labels) + 0.5 * l2 * weights.squaredNorm();
  if (grad_weights != nullptr || grad_bias != nullptr) {
    for (Index i = 0; i < probs.rows(); ++i) probs(i, static_cast<Index>(labels[static_cast<std::size_t>(i)])) -= 1.0;
    probs /= static_cast<double>(x.rows());
    if (grad_weights != nullptr) *grad_weights = x.transpose() * probs + l2 * weights;
    if (grad_bias != nullptr) *grad_bias = probs.colwise().sum().transpose();
  }
  return loss;
}

LinearProbe train_probe(const Eigen::Ref<const MatrixXd>& x, std::span<const std::size_t> labels,
                        std::size_t num_classes, const ProbeConfig& cfg, TrainingTrace* trace) {
  check_labels(labels, x.rows(), num_classes);
  require_two_classes(labels, num_classes);
  if (!x.allFinite()) throw Error(ErrorCode::kNonFiniteValue, "probe features contain NaN or Inf");

  const auto classes = static_cast<Index>(num_classes);
  MatrixXd w = MatrixXd::Zero(x.cols(), classes);
  VectorXd b = VectorXd::Zero(classes);
  MatrixXd gw;
  VectorXd gb;
  double loss = probe_loss(x, labels, w, b, cfg.l2, &gw, &gb);
  TrainingTrace local;
  local.losses.push_back(loss);
  double step = cfg.step;

  while (local.iterations < cfg.max_iters) {
    const double grad_norm = std::sqrt(gw.squaredNorm() + gb.squaredNorm());
    if (grad_norm < cfg.tol) {
      local.converged = true;
      break;
    }
    ++local.iterations;
    const MatrixXd w_next = w - step * gw;
    const VectorXd b_next = b - step * gb;
    MatrixXd gw_next;
    VectorXd gb_next;
    const double next = probe_loss(x, labels, w_next, b_next, cfg.l2, &gw_next, &gb_next);
    if (!std::isfinite(next)) throw Error(ErrorCode::kNonFiniteLoss, "loss diverged");
    if (next > loss) {
      ++local.rejected_steps;
      step *= 0.5;
      if (step < cfg.min_step) break;
      continue;
    }
    w = w_next;
    b = b_next;
    gw = std::move(gw_next);
    gb = std::move(gb_next);
    loss = next;
    local.losses.push_back(loss);
  }
  if (trace != nullptr) *trace = std::move(local);
  return {std::move(w), std::move(b), {}};
}

std::vector<std::size_t> predict(const LinearProbe& probe, const Eigen::Ref<const MatrixXd>& x) {
  if (x.cols() != probe.weights.rows()) {
    throw Error(ErrorCode::kDimensionMismatch, "probe expects " + std::to_string(probe.weights.rows()) +
                                                   " features, got " + std::to_string(x.cols()));
  }
  MatrixXd scores = x * probe.weights;
  scores.rowwise() += probe.bias.transpose();
  std::vector<std::size_t> out(static_cast<std::size_t>(x.rows()));
  for (Index i = 0; i < scores.rows(); ++i) {
    Index best = 0;
    for (Index c = 1; c < scores.cols(); ++c) {
      if (scores(i, c) > scores(i, best)) best = c;
    }
    out[static_cast<std::size_t>(i)] = static_cast<std::size_t>(best);
  }
  return out;
}

double eval_probe(const LinearProbe& probe, const Eigen::Ref<const MatrixXd>& x, std::span<const std::size_t> labels) {
  if (labels.size() != static_cast<std::size_t>(x.rows())) {
    throw Error(ErrorCode::kDimensionMismatch, "label count does not match rows");
  }
  if (labels.empty()) throw Error(ErrorCode::kEmptyInput, "no evaluation instances");
  const auto pred = predict(probe, x);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == labels[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(pred.size());
}

VectorXd softmax(const Eigen::Ref<const VectorXd>& logits) {
  const VectorXd shifted = logits.array() - logits.maxCoeff();
  const VectorXd e = shifted.array().exp();
  return e / e.sum();
}

MatrixXd combine_layers(std::span<const MatrixXd> layers, const Eigen::Ref<const VectorXd>& weights) {
  MatrixXd out = weights(0) * layers[0];
  for (std::size_t l = 1; l < layers.size(); ++l) out += weights(static_cast<Index>(l)) * layers[l];
  return out;
}

namespace {

void check_layers(std::span<const MatrixXd> layers) {
  if (layers.empty()) throw Error(ErrorCode::kLayerShapeMismatch, "no layers");
  for (const auto& l : layers) {
    if (l.rows() != layers[0].rows() || l.cols() != layers[0].cols()) {
      throw Error(ErrorCode::kLayerShapeMismatch, "all layers must share one shape");
    }
  }
}

struct WeightedSumState {
  VectorXd logits;
  MatrixXd w;
  VectorXd b;
};

double weighted_sum_loss(std::span<const MatrixXd> layers, std::span<const std::size_t> labels,
                         const WeightedSumState& s, double l2, WeightedSumState* grad) {
  const VectorXd mix = softmax(s.logits);
  const MatrixXd combined = combine_layers(layers, mix);
  if (grad == nullptr) return probe_loss(combined, labels, s.w, s.b, l2);

  MatrixXd probs = combined * s.w;
  probs.rowwise() += s.b.transpose();
  const double loss = softmax_nll(probs, labels) + 0.5 * l2 * s.w.squaredNorm();
  for (Index i = 0; i < probs.rows(); ++i) probs(i, static_cast<Index>(labels[static_cast<std::size_t>(i)])) -= 1.0;
  probs /= static_cast<double>(combined.rows());
  grad->w = combined.transpose() * probs + l2 * s.w;
  grad->b = probs.colwise().sum().transpose();
  // dLoss/dcombined, then through the convex combination and the softmax.
  const MatrixXd g_combined = probs * s.w.transpose();
  VectorXd g_mix(static_cast<Index>(layers.size()));
  for (std::size_t l = 0; l < layers.size(); ++l) {
    g_mix(static_cast<Index>(l)) = (g_combined.array() * layers[l].array()).sum();
  }
  grad->logits = mix.array() * (g_mix.array() - mix.dot(g_mix));
  return loss;
}

}  // namespace

WeightedSumProbe train_weighted_sum(std::span<const MatrixXd> layers, std::span<const std::size_t> labels,
                                    std::size_t num_classes, const ProbeConfig& cfg, TrainingTrace* trace) {
  check_layers(layers);
  check_labels(labels, layers[0].rows(), num_classes);
  require_two_classes(labels, num_classes);

  const auto classes = static_cast<Index>(num_classes);
  WeightedSumState state{VectorXd::Zero(static_cast<Index>(layers.size())),
                         MatrixXd::Zero(layers[0].cols(), classes), VectorXd::Zero(classes)};
  WeightedSumState grad;
  double loss = weighted_sum_loss(layers, labels, state, cfg.l2, &grad);
  TrainingTrace local;
  local.losses.push_back(loss);
  double step = cfg.step;

  while (local.iterations < cfg.max_iters) {
    const double grad_norm = std::sqrt(grad.logits.squaredNorm() + grad.w.squaredNorm() + grad.b.squaredNorm());
    if (grad_norm < cfg.tol) {
      local.converged = true;
      break;
    }
    ++local.iterations;
    WeightedSumState next{state.logits - step * grad.logits, state.w - step * grad.w, state.b - step * grad.b};
    WeightedSumState next_grad;
    const double next_loss = weighted_sum_loss(layers, labels, next, cfg.l2, &next_grad);
    if (!std::isfinite(next_loss)) throw Error(ErrorCode::kNonFiniteLoss, "loss diverged");
    if (next_loss > loss) {
      ++local.rejected_steps;
      step *= 0.5;
      if (step < cfg.min_step) break;
      continue;
    }
    state = std::move(next);
    grad = std::move(next_grad);
    loss = next_loss;
    local.losses.push_back(loss);
  }
  if (trace != nullptr) *trace = std::move(local);

  WeightedSumProbe out;
  out.weighting.weights = softmax(state.logits);
  out.weighting.logits = std::move(state.logits);
  out.probe.weights = std::move(state.w);
  out.probe.bias = std::move(state.b);
  return out;
}

double eval_weighted_sum(const WeightedSumProbe& model, std::span<const MatrixXd> layers,
                         std::span<const std::size_t> labels) {
  check_layers(layers);
  if (static_cast<Index>(layers.size()) != model.weighting.weights.size()) {
    throw Error(ErrorCode::kLayerShapeMismatch, "layer count differs from the trained weighting");
  }
  return eval_probe(model.probe, combine_layers(layers, model.weighting.weights), labels);
}

std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = avg;
    i = j + 1;
  }
  return ranks;
}

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::kLengthMismatch, std::to_string(a.size()) + " vs " + std::to_string(b.size()) + " values");
  }
  if (a.size() < 2) throw Error(ErrorCode::kLengthMismatch, "need at least two values");
  const auto finite = [](double v) { return std::isfinite(v); };
  if (!std::all_of(a.begin(), a.end(), finite) || !std::all_of(b.begin(), b.end(), finite)) {
    throw Error(ErrorCode::kNonFiniteValue, "spearman inputs must be finite");
  }
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) throw Error(ErrorCode::kConstantInput, "ranks have zero variance");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

std::string_view curve_kind_name(CurveKind kind) noexcept {
  switch (kind) {
    case CurveKind::kCcaMel: return "cca_mel";
    case CurveKind::kCcaPhone: return "cca_phone";
    case CurveKind::kCcaWord: return "cca_word";
    case CurveKind::kCcaIntra: return "cca_intra";
    case CurveKind::kTaskAccuracy: return "task_accuracy";
  }
  return "task_accuracy";
}

double correlate_curves(const LayerCurve& analysis, const LayerCurve& task, bool task_is_error_rate) {
  std::vector<double> a, t;
  for (std::size_t i = 0; i < analysis.layers.size(); ++i) {
    const auto it = std::find(task.layers.begin(), task.layers.end(), analysis.layers[i]);
    if (it == task.layers.end()) continue;
    a.push_back(analysis.values[i]);
    const double v = task.values[static_cast<std::size_t>(it - task.layers.begin())];
    t.push_back(task_is_error_rate ? 100.0 - v : v);
  }
  if (a.size() < 2) {
    throw Error(ErrorCode::kNoCommonLayers,
                "curves share " + std::to_string(a.size()) + " layer(s); need at least two");
  }
  return spearman(a, t);
}

}  // namespace layerscope
