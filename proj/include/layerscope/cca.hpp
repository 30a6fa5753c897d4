#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace layerscope {

// Diagonal loading added to each view's covariance before whitening.
struct CcaConfig {
  double eps_x = 0.0;
  double eps_y = 0.0;

  void validate() const;
  friend bool operator==(const CcaConfig&, const CcaConfig&) = default;
};

// How the per-direction raw weight aggregates |<h_i, x_j>| over the feature
// columns x_j. kL2 (the default) keeps the similarity invariant to rotations of
// the feature axes; kL1 is the coordinate-dependent sum of absolute values.
enum class WeightNorm { kL2, kL1 };

struct CcaProjection {
  Eigen::VectorXd mean_x;
  Eigen::VectorXd mean_y;
  Eigen::MatrixXd vx;       // d1 x k
  Eigen::MatrixXd wy;       // d2 x k
  Eigen::VectorXd fit_rho;  // singular values of the whitened cross-covariance

  Eigen::Index k() const { return vx.cols(); }
};

// Second-order statistics of a paired sample; enough to fit CCA for any
// regularization without touching the rows again.
struct CrossMoments {
  Eigen::Index n = 0;
  Eigen::VectorXd mean_x;
  Eigen::VectorXd mean_y;
  Eigen::MatrixXd sxx;
  Eigen::MatrixXd syy;
  Eigen::MatrixXd sxy;
};

CrossMoments cross_moments(const Eigen::Ref<const Eigen::MatrixXd>& x,
                           const Eigen::Ref<const Eigen::MatrixXd>& y);
// Moments of the union of two disjoint samples (pairwise update).
CrossMoments merge_moments(const CrossMoments& a, const CrossMoments& b);

// Caches the eigendecompositions of both covariances so a regularization grid
// costs one small SVD per point.
class CcaSolver {
 public:
  explicit CcaSolver(CrossMoments moments);

  CcaProjection solve(const CcaConfig& cfg) const;
  const CrossMoments& moments() const { return moments_; }

 private:
  CrossMoments moments_;
  Eigen::MatrixXd x_vectors_, y_vectors_;
  Eigen::VectorXd x_values_, y_values_;
};

CcaProjection fit_cca(const Eigen::Ref<const Eigen::MatrixXd>& x,
                      const Eigen::Ref<const Eigen::MatrixXd>& y, const CcaConfig& cfg);
CcaProjection fit_cca(const CrossMoments& moments, const CcaConfig& cfg);

struct Correlations {
  Eigen::VectorXd rho;             // |corr| clipped to [0, 1], fit order
  std::vector<bool> zero_variance; // projection constant on this data; rho forced to 0
};

Correlations eval_correlations(const CcaProjection& proj, const Eigen::Ref<const Eigen::MatrixXd>& x,
                               const Eigen::Ref<const Eigen::MatrixXd>& y);
// Same correlations from the evaluation sample's moments.
Correlations eval_correlations(const CcaProjection& proj, const CrossMoments& eval);

struct PwccaWeights {
  Eigen::VectorXd alpha;  // nonnegative, sums to 1
  bool uniform_fallback = false;  // every raw weight was zero
};

PwccaWeights pwcca_weights(const CcaProjection& proj, const Eigen::Ref<const Eigen::MatrixXd>& x,
                           WeightNorm norm = WeightNorm::kL2);
// <h_i, x_j> over the sample equals (n - 1) * (Sxx v_i)_j, so the weights
// follow from the X covariance alone.
PwccaWeights pwcca_weights(const CcaProjection& proj, const CrossMoments& weight_moments,
                           WeightNorm norm = WeightNorm::kL2);

struct CcaResult {
  Eigen::VectorXd rho;
  Eigen::VectorXd alpha;
  double pwcca = 0.0;
  std::vector<bool> zero_variance;
  bool uniform_weights = false;
};

// Fits on the training pair, scores canonical correlations on the test pair and
// weights them by the training X view.
CcaResult pwcca_similarity(const Eigen::Ref<const Eigen::MatrixXd>& x_train,
                           const Eigen::Ref<const Eigen::MatrixXd>& y_train,
                           const Eigen::Ref<const Eigen::MatrixXd>& x_test,
                           const Eigen::Ref<const Eigen::MatrixXd>& y_test, const CcaConfig& cfg,
                           WeightNorm norm = WeightNorm::kL2);

// Same as above for an already-fitted projection.
CcaResult score_projection(const CcaProjection& proj, const Eigen::Ref<const Eigen::MatrixXd>& x_weight,
                           const Eigen::Ref<const Eigen::MatrixXd>& x_test,
                           const Eigen::Ref<const Eigen::MatrixXd>& y_test,
                           WeightNorm norm = WeightNorm::kL2);
CcaResult score_projection(const CcaProjection& proj, const CrossMoments& weight_moments,
                           const CrossMoments& test_moments, WeightNorm norm = WeightNorm::kL2);

Eigen::MatrixXd onehot(std::span<const std::size_t> labels, std::size_t vocab_size);
Eigen::MatrixXd onehot(std::span<const std::string> labels, std::span<const std::string> vocab);

}  // namespace layerscope
