#include "layerscope/cca.hpp"

#include "layerscope/error.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <map>

namespace layerscope {
namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

// Eigenvalues below this fraction of the mean eigenvalue are treated as zero.
constexpr double kRankTolerance = 1e-10;
// Projected variance below this fraction of the projection's raw energy
// (spread plus squared offset from the fitting mean) counts as constant.
constexpr double kZeroVarianceTolerance = 1e-14;

void require_finite(const Eigen::Ref<const MatrixXd>& m, const char* what) {
  if (!m.allFinite()) throw Error(ErrorCode::kNonFiniteValue, std::string(what) + " contains NaN or Inf");
}

// Pseudo inverse square root from a cached eigendecomposition of the raw
// covariance plus diagonal loading. Returns false when every eigenvalue falls
// below the rank tolerance.
bool inverse_sqrt(const MatrixXd& vectors, const VectorXd& values, double eps, MatrixXd& out) {
  const Index d = values.size();
  const double trace = values.sum() + eps * static_cast<double>(d);
  if (!(trace > 0.0)) return false;
  const double floor = kRankTolerance * trace / static_cast<double>(d);
  VectorXd scale(d);
  bool any = false;
  for (Index i = 0; i < d; ++i) {
    const double lambda = values(i) + eps;
    if (lambda > floor) {
      scale(i) = 1.0 / std::sqrt(lambda);
      any = true;
    } else {
      scale(i) = 0.0;
    }
  }
  out = vectors * scale.asDiagonal() * vectors.transpose();
  return any;
}

double column_correlation(const VectorXd& a, const VectorXd& b, double scale_a, double scale_b, bool& constant) {
  const VectorXd ac = a.array() - a.mean();
  const VectorXd bc = b.array() - b.mean();
  const double va = ac.squaredNorm();
  const double vb = bc.squaredNorm();
  constant = !(va > kZeroVarianceTolerance * (scale_a + a.squaredNorm())) ||
             !(vb > kZeroVarianceTolerance * (scale_b + b.squaredNorm()));
  if (constant) return 0.0;
  return std::clamp(std::abs(ac.dot(bc)) / std::sqrt(va * vb), 0.0, 1.0);
}

}  // namespace

void CcaConfig::validate() const {
  if (!(eps_x >= 0.0) || !(eps_y >= 0.0) || !std::isfinite(eps_x) || !std::isfinite(eps_y)) {
    throw Error(ErrorCode::kInvalidConfig, "regularizers must be finite and nonnegative");
  }
}

CrossMoments cross_moments(const Eigen::Ref<const MatrixXd>& x, const Eigen::Ref<const MatrixXd>& y) {
  if (x.rows() != y.rows()) {
    throw Error(ErrorCode::kRowCountMismatch,
                std::to_string(x.rows()) + " rows in X vs " + std::to_string(y.rows()) + " in Y");
  }
  if (x.rows() < 2) throw Error(ErrorCode::kDegenerateInput, "need at least 2 samples");
  if (x.cols() < 1 || y.cols() < 1) throw Error(ErrorCode::kDegenerateInput, "views need at least one column");
  require_finite(x, "X");
  require_finite(y, "Y");

  CrossMoments m;
  m.n = x.rows();
  m.mean_x = x.colwise().mean().transpose();
  m.mean_y = y.colwise().mean().transpose();
  const MatrixXd xc = x.rowwise() - m.mean_x.transpose();
  const MatrixXd yc = y.rowwise() - m.mean_y.transpose();
  const double denom = static_cast<double>(m.n - 1);
  m.sxx = (xc.transpose() * xc) / denom;
  m.syy = (yc.transpose() * yc) / denom;
  m.sxy = (xc.transpose() * yc) / denom;
  return m;
}

CrossMoments merge_moments(const CrossMoments& a, const CrossMoments& b) {
  if (a.sxx.rows() != b.sxx.rows() || a.syy.rows() != b.syy.rows()) {
    throw Error(ErrorCode::kDimensionMismatch, "cannot merge moments of different widths");
  }
  CrossMoments m;
  m.n = a.n + b.n;
  const double na = static_cast<double>(a.n);
  const double nb = static_cast<double>(b.n);
  const double n = static_cast<double>(m.n);
  const VectorXd dx = b.mean_x - a.mean_x;
  const VectorXd dy = b.mean_y - a.mean_y;
  m.mean_x = a.mean_x + dx * (nb / n);
  m.mean_y = a.mean_y + dy * (nb / n);
  const double shift = na * nb / n;
  m.sxx = (a.sxx * (na - 1.0) + b.sxx * (nb - 1.0) + dx * dx.transpose() * shift) / (n - 1.0);
  m.syy = (a.syy * (na - 1.0) + b.syy * (nb - 1.0) + dy * dy.transpose() * shift) / (n - 1.0);
  m.sxy = (a.sxy * (na - 1.0) + b.sxy * (nb - 1.0) + dx * dy.transpose() * shift) / (n - 1.0);
  return m;
}

CcaSolver::CcaSolver(CrossMoments moments) : moments_(std::move(moments)) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> ex(moments_.sxx);
  x_vectors_ = ex.eigenvectors();
  x_values_ = ex.eigenvalues();
  Eigen::SelfAdjointEigenSolver<MatrixXd> ey(moments_.syy);
  y_vectors_ = ey.eigenvectors();
  y_values_ = ey.eigenvalues();
}

CcaProjection CcaSolver::solve(const CcaConfig& cfg) const {
  cfg.validate();
  const Index k = std::min(x_values_.size(), y_values_.size());

  MatrixXd wx, wy;
  if (!inverse_sqrt(x_vectors_, x_values_, cfg.eps_x, wx)) {
    throw Error(ErrorCode::kDegenerateInput, "X has zero variance in every coordinate");
  }
  if (!inverse_sqrt(y_vectors_, y_values_, cfg.eps_y, wy)) {
    throw Error(ErrorCode::kDegenerateInput, "Y has zero variance in every coordinate");
  }

  const MatrixXd whitened = wx * moments_.sxy * wy;
  Eigen::BDCSVD<MatrixXd> svd(whitened, Eigen::ComputeThinU | Eigen::ComputeThinV);

  CcaProjection proj;
  proj.mean_x = moments_.mean_x;
  proj.mean_y = moments_.mean_y;
  proj.vx = wx * svd.matrixU().leftCols(k);
  proj.wy = wy * svd.matrixV().leftCols(k);
  proj.fit_rho = svd.singularValues().head(k).cwiseMax(0.0).cwiseMin(1.0);

  // Sign convention: the largest-magnitude entry of each X direction is positive.
  for (Index i = 0; i < k; ++i) {
    Index arg = 0;
    proj.vx.col(i).cwiseAbs().maxCoeff(&arg);
    double pivot = proj.vx(arg, i);
    if (pivot == 0.0) {
      proj.wy.col(i).cwiseAbs().maxCoeff(&arg);
      pivot = proj.wy(arg, i);
    }
    if (pivot < 0.0) {
      proj.vx.col(i) *= -1.0;
      proj.wy.col(i) *= -1.0;
    }
  }
  return proj;
}

CcaProjection fit_cca(const CrossMoments& m, const CcaConfig& cfg) {
  cfg.validate();
  return CcaSolver(m).solve(cfg);
}

CcaProjection fit_cca(const Eigen::Ref<const MatrixXd>& x, const Eigen::Ref<const MatrixXd>& y,
                      const CcaConfig& cfg) {
  cfg.validate();
  return fit_cca(cross_moments(x, y), cfg);
}

Correlations eval_correlations(const CcaProjection& proj, const Eigen::Ref<const MatrixXd>& x,
                               const Eigen::Ref<const MatrixXd>& y) {
  if (x.cols() != proj.vx.rows() || y.cols() != proj.wy.rows()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "projection expects " + std::to_string(proj.vx.rows()) + "/" + std::to_string(proj.wy.rows()) +
                    " columns, got " + std::to_string(x.cols()) + "/" + std::to_string(y.cols()));
  }
  if (x.rows() != y.rows()) {
    throw Error(ErrorCode::kDimensionMismatch, "X and Y row counts differ");
  }
  if (x.rows() < 2) throw Error(ErrorCode::kDimensionMismatch, "need at least 2 samples");
  require_finite(x, "X");
  require_finite(y, "Y");

  const MatrixXd xc = x.rowwise() - proj.mean_x.transpose();
  const MatrixXd yc = y.rowwise() - proj.mean_y.transpose();
  const MatrixXd hx = xc * proj.vx;
  const MatrixXd hy = yc * proj.wy;

  // Per-feature sum of squares around the evaluation mean, for the
  // zero-variance threshold.
  const double ssx = (xc.rowwise() - xc.colwise().mean()).squaredNorm() / static_cast<double>(x.cols());
  const double ssy = (yc.rowwise() - yc.colwise().mean()).squaredNorm() / static_cast<double>(y.cols());

  Correlations out;
  const Index k = proj.k();
  out.rho.resize(k);
  out.zero_variance.assign(static_cast<std::size_t>(k), false);
  for (Index i = 0; i < k; ++i) {
    bool constant = false;
    out.rho(i) = column_correlation(hx.col(i), hy.col(i), proj.vx.col(i).squaredNorm() * ssx,
                                    proj.wy.col(i).squaredNorm() * ssy, constant);
    out.zero_variance[static_cast<std::size_t>(i)] = constant;
  }
  return out;
}

Correlations eval_correlations(const CcaProjection& proj, const CrossMoments& eval) {
  if (eval.sxx.rows() != proj.vx.rows() || eval.syy.rows() != proj.wy.rows()) {
    throw Error(ErrorCode::kDimensionMismatch, "evaluation moments do not match the projection");
  }
  if (eval.n < 2) throw Error(ErrorCode::kDimensionMismatch, "need at least 2 samples");
  const MatrixXd sx_v = eval.sxx * proj.vx;
  const MatrixXd sy_w = eval.syy * proj.wy;
  const MatrixXd sxy_w = eval.sxy * proj.wy;
  const double mean_var_x = eval.sxx.trace() / static_cast<double>(eval.sxx.rows());
  const double mean_var_y = eval.syy.trace() / static_cast<double>(eval.syy.rows());

  Correlations out;
  const Index k = proj.k();
  out.rho.resize(k);
  out.zero_variance.assign(static_cast<std::size_t>(k), false);
  for (Index i = 0; i < k; ++i) {
    const double va = proj.vx.col(i).dot(sx_v.col(i));
    const double vb = proj.wy.col(i).dot(sy_w.col(i));
    const double n = static_cast<double>(eval.n);
    const double offset_a = proj.vx.col(i).dot(eval.mean_x - proj.mean_x);
    const double offset_b = proj.wy.col(i).dot(eval.mean_y - proj.mean_y);
    const double energy_a = proj.vx.col(i).squaredNorm() * mean_var_x + offset_a * offset_a * n / (n - 1.0);
    const double energy_b = proj.wy.col(i).squaredNorm() * mean_var_y + offset_b * offset_b * n / (n - 1.0);
    const bool constant = !(va > kZeroVarianceTolerance * energy_a) || !(vb > kZeroVarianceTolerance * energy_b);
    out.zero_variance[static_cast<std::size_t>(i)] = constant;
    out.rho(i) = constant ? 0.0 : std::clamp(std::abs(proj.vx.col(i).dot(sxy_w.col(i))) / std::sqrt(va * vb), 0.0, 1.0);
  }
  return out;
}

namespace {

PwccaWeights normalize_weights(const MatrixXd& overlap, WeightNorm norm) {
  const Index k = overlap.cols();
  VectorXd raw(k);
  for (Index i = 0; i < k; ++i) {
    raw(i) = norm == WeightNorm::kL1 ? overlap.col(i).cwiseAbs().sum() : overlap.col(i).norm();
  }
  PwccaWeights out;
  const double total = raw.sum();
  if (!(total > 0.0) || !std::isfinite(total)) {
    out.alpha = VectorXd::Constant(k, 1.0 / static_cast<double>(k));
    out.uniform_fallback = true;
  } else {
    out.alpha = raw / total;
  }
  return out;
}

}  // namespace

PwccaWeights pwcca_weights(const CcaProjection& proj, const CrossMoments& weight_moments, WeightNorm norm) {
  if (weight_moments.sxx.rows() != proj.vx.rows()) {
    throw Error(ErrorCode::kDimensionMismatch, "weight moments do not match the projection");
  }
  return normalize_weights(weight_moments.sxx * proj.vx * static_cast<double>(weight_moments.n - 1), norm);
}

PwccaWeights pwcca_weights(const CcaProjection& proj, const Eigen::Ref<const MatrixXd>& x, WeightNorm norm) {
  if (x.cols() != proj.vx.rows()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "projection expects " + std::to_string(proj.vx.rows()) + " columns, got " + std::to_string(x.cols()));
  }
  if (x.rows() < 2) throw Error(ErrorCode::kDimensionMismatch, "need at least 2 samples");

  const MatrixXd xc = x.rowwise() - x.colwise().mean();
  const MatrixXd h = xc * proj.vx;              // canonical variates, n x k
  return normalize_weights(xc.transpose() * h, norm);  // <h_i, x_j>, d1 x k
}

CcaResult score_projection(const CcaProjection& proj, const Eigen::Ref<const MatrixXd>& x_weight,
                           const Eigen::Ref<const MatrixXd>& x_test, const Eigen::Ref<const MatrixXd>& y_test,
                           WeightNorm norm) {
  Correlations corr = eval_correlations(proj, x_test, y_test);
  PwccaWeights weights = pwcca_weights(proj, x_weight, norm);
  CcaResult out;
  out.pwcca = std::clamp(weights.alpha.dot(corr.rho), 0.0, 1.0);
  out.rho = std::move(corr.rho);
  out.zero_variance = std::move(corr.zero_variance);
  out.alpha = std::move(weights.alpha);
  out.uniform_weights = weights.uniform_fallback;
  return out;
}

CcaResult pwcca_similarity(const Eigen::Ref<const MatrixXd>& x_train, const Eigen::Ref<const MatrixXd>& y_train,
                           const Eigen::Ref<const MatrixXd>& x_test, const Eigen::Ref<const MatrixXd>& y_test,
                           const CcaConfig& cfg, WeightNorm norm) {
  if (x_train.cols() != x_test.cols() || y_train.cols() != y_test.cols()) {
    throw Error(ErrorCode::kDimensionMismatch, "train and test views have different widths");
  }
  const CcaProjection proj = fit_cca(x_train, y_train, cfg);
  return score_projection(proj, x_train, x_test, y_test, norm);
}

CcaResult score_projection(const CcaProjection& proj, const CrossMoments& weight_moments,
                           const CrossMoments& test_moments, WeightNorm norm) {
  Correlations corr = eval_correlations(proj, test_moments);
  PwccaWeights weights = pwcca_weights(proj, weight_moments, norm);
  CcaResult out;
  out.pwcca = std::clamp(weights.alpha.dot(corr.rho), 0.0, 1.0);
  out.rho = std::move(corr.rho);
  out.zero_variance = std::move(corr.zero_variance);
  out.alpha = std::move(weights.alpha);
  out.uniform_weights = weights.uniform_fallback;
  return out;
}

MatrixXd onehot(std::span<const std::size_t> labels, std::size_t vocab_size) {
  if (labels.empty()) throw Error(ErrorCode::kEmptyInput, "no labels");
  MatrixXd out = MatrixXd::Zero(static_cast<Index>(labels.size()), static_cast<Index>(vocab_size));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= vocab_size) {
      throw Error(ErrorCode::kUnknownLabel,
                  "label id " + std::to_string(labels[i]) + " outside vocab of " + std::to_string(vocab_size));
    }
    out(static_cast<Index>(i), static_cast<Index>(labels[i])) = 1.0;
  }
  return out;
}

MatrixXd onehot(std::span<const std::string> labels, std::span<const std::string> vocab) {
  std::map<std::string, std::size_t, std::less<>> index;
  for (std::size_t i = 0; i < vocab.size(); ++i) index.emplace(vocab[i], i);
  std::vector<std::size_t> ids;
  ids.reserve(labels.size());
  for (const auto& l : labels) {
    const auto it = index.find(l);
    if (it == index.end()) throw Error(ErrorCode::kUnknownLabel, "label '" + l + "' not in vocab");
    ids.push_back(it->second);
  }
  return onehot(ids, vocab.size());
}

}  // namespace layerscope
