#include "layerscope/error.hpp"
#include "layerscope/probes.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

using namespace layerscope;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

template <typename F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected a layerscope::Error";
  return ErrorCode::kInvalidConfig;
}

struct Labeled {
  MatrixXd x;
  std::vector<std::size_t> y;
};

// Well-separated Gaussian blobs, one per class.
Labeled blobs(std::size_t per_class, std::size_t classes, std::size_t dim, double spread, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  const MatrixXd centers = 4.0 * oracle::gaussian(gen, static_cast<Eigen::Index>(classes), static_cast<Eigen::Index>(dim));
  Labeled out;
  out.x = spread * oracle::gaussian(gen, static_cast<Eigen::Index>(per_class * classes), static_cast<Eigen::Index>(dim));
  for (std::size_t i = 0; i < per_class * classes; ++i) {
    const std::size_t c = i % classes;
    out.x.row(static_cast<Eigen::Index>(i)) += centers.row(static_cast<Eigen::Index>(c));
    out.y.push_back(c);
  }
  return out;
}

}  // namespace

TEST(ProbeLoss, MatchesExplicitOracle) {
  std::mt19937_64 gen(1);
  const MatrixXd x = oracle::gaussian(gen, 30, 4);
  const MatrixXd w = oracle::gaussian(gen, 4, 3);
  const VectorXd b = oracle::gaussian(gen, 3, 1);
  std::vector<std::size_t> y(30);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = (i * 7) % 3;
  EXPECT_NEAR(probe_loss(x, y, w, b, 0.3), oracle::softmax_loss(x, y, w, b, 0.3), 1e-12);
  // Zero weights give log(C).
  EXPECT_NEAR(probe_loss(x, y, MatrixXd::Zero(4, 3), VectorXd::Zero(3), 0.0), std::log(3.0), 1e-12);
}

TEST(ProbeLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 gen(2);
  const MatrixXd x = oracle::gaussian(gen, 25, 3);
  MatrixXd w = oracle::gaussian(gen, 3, 4);
  VectorXd b = oracle::gaussian(gen, 4, 1);
  std::vector<std::size_t> y(25);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = i % 4;
  MatrixXd gw;
  VectorXd gb;
  probe_loss(x, y, w, b, 0.05, &gw, &gb);
  const double h = 1e-6;
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    MatrixXd wp = w, wm = w;
    wp.data()[i] += h;
    wm.data()[i] -= h;
    const double fd = (oracle::softmax_loss(x, y, wp, b, 0.05) - oracle::softmax_loss(x, y, wm, b, 0.05)) / (2 * h);
    EXPECT_NEAR(gw.data()[i], fd, 1e-7);
  }
  for (Eigen::Index i = 0; i < b.size(); ++i) {
    VectorXd bp = b, bm = b;
    bp(i) += h;
    bm(i) -= h;
    const double fd = (oracle::softmax_loss(x, y, w, bp, 0.05) - oracle::softmax_loss(x, y, w, bm, 0.05)) / (2 * h);
    EXPECT_NEAR(gb(i), fd, 1e-7);
  }
}

TEST(Probe, SeparableBlobsAreLearned) {
  const Labeled train = blobs(100, 4, 8, 0.5, 3);
  const Labeled test = blobs(50, 4, 8, 0.5, 3);
  const LinearProbe p = train_probe(train.x, train.y, 4);
  EXPECT_GE(eval_probe(p, train.x, train.y), 0.99);
  EXPECT_GE(eval_probe(p, test.x, test.y), 0.99);
  EXPECT_EQ(p.num_classes(), 4u);
}

TEST(Probe, RandomLabelsStayNearChance) {
  std::mt19937_64 gen(4);
  const MatrixXd x = oracle::gaussian(gen, 1200, 5);
  std::bernoulli_distribution coin(0.5);
  std::vector<std::size_t> y(1200);
  for (auto& v : y) v = coin(gen) ? 1 : 0;
  const LinearProbe p = train_probe(x.topRows(800), std::span(y).first(800), 2);
  const double acc = eval_probe(p, x.bottomRows(400), std::span(y).subspan(800));
  EXPECT_GE(acc, 0.35);
  EXPECT_LE(acc, 0.65);
}

TEST(Probe, LossNeverIncreases) {
  const Labeled d = blobs(40, 3, 6, 2.0, 5);
  ProbeConfig cfg;
  cfg.step = 50.0;  // deliberately too large so halving kicks in
  cfg.max_iters = 200;
  TrainingTrace trace;
  train_probe(d.x, d.y, 3, cfg, &trace);
  EXPECT_GT(trace.rejected_steps, 0u);
  ASSERT_GE(trace.losses.size(), 2u);
  for (std::size_t i = 1; i < trace.losses.size(); ++i) EXPECT_LE(trace.losses[i], trace.losses[i - 1]);
  EXPECT_NEAR(trace.losses.front(), std::log(3.0), 1e-12);
}

TEST(Probe, IsDeterministic) {
  const Labeled d = blobs(30, 3, 5, 1.5, 6);
  const LinearProbe a = train_probe(d.x, d.y, 3);
  const LinearProbe b = train_probe(d.x, d.y, 3);
  EXPECT_EQ(a.weights, b.weights);
  EXPECT_EQ(a.bias, b.bias);
}

TEST(Probe, ZeroProbePredictsClassZero) {
  const Labeled d = blobs(10, 3, 4, 1.0, 7);
  ProbeConfig cfg;
  cfg.max_iters = 0;
  const LinearProbe p = train_probe(d.x, d.y, 3, cfg);
  EXPECT_TRUE(p.weights.isZero());
  const auto pred = predict(p, d.x);
  for (auto c : pred) EXPECT_EQ(c, 0u);
  EXPECT_NEAR(eval_probe(p, d.x, d.y), 1.0 / 3.0, 1e-12);
}

TEST(Probe, Errors) {
  const Labeled d = blobs(10, 2, 3, 1.0, 8);
  const std::vector<std::size_t> same(d.y.size(), 1);
  EXPECT_EQ(code_of([&] { train_probe(d.x, same, 2); }), ErrorCode::kSingleClass);
  EXPECT_EQ(code_of([&] { train_probe(d.x, std::vector<std::size_t>(d.y.size(), 0), 1); }), ErrorCode::kSingleClass);
  EXPECT_EQ(code_of([&] { train_probe(d.x.topRows(5), d.y, 2); }), ErrorCode::kDimensionMismatch);
  EXPECT_EQ(code_of([&] { train_probe(d.x, std::vector<std::size_t>(d.y.size(), 5), 2); }), ErrorCode::kUnknownLabel);
  MatrixXd bad = d.x;
  bad(0, 0) = std::nan("");
  EXPECT_EQ(code_of([&] { train_probe(bad, d.y, 2); }), ErrorCode::kNonFiniteValue);
  const LinearProbe p = train_probe(d.x, d.y, 2);
  EXPECT_EQ(code_of([&] { eval_probe(p, d.x.leftCols(2), d.y); }), ErrorCode::kDimensionMismatch);
}

// ---------------------------------------------------------------------------

TEST(WeightedSum, SoftmaxIsPositiveAndNormalized) {
  VectorXd logits(4);
  logits << 1000.0, -1000.0, 0.0, 3.0;
  const VectorXd w = softmax(logits);
  EXPECT_NEAR(w.sum(), 1.0, 1e-12);
  EXPECT_TRUE(w.allFinite());
  EXPECT_GE(w.minCoeff(), 0.0);
  EXPECT_GT(softmax(VectorXd::Constant(3, -5.0)).minCoeff(), 0.0);
}

TEST(WeightedSum, SingleLayerEqualsPlainProbe) {
  const Labeled d = blobs(30, 3, 4, 1.5, 9);
  const std::vector<MatrixXd> layers = {d.x};
  ProbeConfig cfg;
  cfg.max_iters = 300;
  const WeightedSumProbe ws = train_weighted_sum(layers, d.y, 3, cfg);
  const LinearProbe p = train_probe(d.x, d.y, 3, cfg);
  EXPECT_DOUBLE_EQ(ws.weighting.weights(0), 1.0);
  EXPECT_NEAR((ws.probe.weights - p.weights).norm(), 0.0, 1e-9);
  EXPECT_NEAR(eval_weighted_sum(ws, layers, d.y), eval_probe(p, d.x, d.y), 1e-12);
}

TEST(WeightedSum, IdenticalLayersKeepUniformWeights) {
  const Labeled d = blobs(30, 3, 4, 1.5, 10);
  const std::vector<MatrixXd> layers(5, d.x);
  const WeightedSumProbe ws = train_weighted_sum(layers, d.y, 3);
  for (Eigen::Index l = 0; l < 5; ++l) EXPECT_NEAR(ws.weighting.weights(l), 0.2, 1e-3);
}

TEST(WeightedSum, InformativeLayerGetsTheLargestWeight) {
  const Labeled d = blobs(60, 3, 4, 1.0, 11);
  std::mt19937_64 gen(12);
  std::vector<MatrixXd> layers;
  for (int l = 0; l < 6; ++l) layers.push_back(oracle::gaussian(gen, d.x.rows(), d.x.cols()));
  layers[3] = d.x;
  ProbeConfig cfg;
  cfg.max_iters = 500;
  const WeightedSumProbe ws = train_weighted_sum(layers, d.y, 3, cfg);
  Eigen::Index best = 0;
  ws.weighting.weights.maxCoeff(&best);
  EXPECT_EQ(best, 3);
}

TEST(WeightedSum, LossNeverIncreasesAndCombineIsLinear) {
  const Labeled d = blobs(30, 2, 3, 2.0, 13);
  std::mt19937_64 gen(14);
  const std::vector<MatrixXd> layers = {d.x, oracle::gaussian(gen, d.x.rows(), 3), 2.0 * d.x};
  TrainingTrace trace;
  ProbeConfig cfg;
  cfg.max_iters = 100;
  train_weighted_sum(layers, d.y, 2, cfg, &trace);
  for (std::size_t i = 1; i < trace.losses.size(); ++i) EXPECT_LE(trace.losses[i], trace.losses[i - 1]);

  VectorXd w(3);
  w << 0.2, 0.3, 0.5;
  const MatrixXd c = combine_layers(layers, w);
  EXPECT_NEAR((c - (0.2 * layers[0] + 0.3 * layers[1] + 0.5 * layers[2])).norm(), 0.0, 1e-12);
}

TEST(WeightedSum, Errors) {
  const Labeled d = blobs(10, 2, 3, 1.0, 15);
  const std::vector<MatrixXd> none;
  EXPECT_EQ(code_of([&] { train_weighted_sum(none, d.y, 2); }), ErrorCode::kLayerShapeMismatch);
  const std::vector<MatrixXd> ragged = {d.x, d.x.leftCols(2)};
  EXPECT_EQ(code_of([&] { train_weighted_sum(ragged, d.y, 2); }), ErrorCode::kLayerShapeMismatch);
  const std::vector<MatrixXd> two = {d.x, d.x};
  const WeightedSumProbe ws = train_weighted_sum(two, d.y, 2);
  const std::vector<MatrixXd> three = {d.x, d.x, d.x};
  EXPECT_EQ(code_of([&] { eval_weighted_sum(ws, three, d.y); }), ErrorCode::kLayerShapeMismatch);
}

// ---------------------------------------------------------------------------

TEST(Spearman, PerfectAndInverseOrder) {
  const std::vector<double> a = {1, 2, 3, 4, 5};
  const std::vector<double> up = {10, 20, 30, 40, 50};
  const std::vector<double> down = {5, 4, 3, 2, 1};
  EXPECT_DOUBLE_EQ(spearman(a, up), 1.0);
  EXPECT_DOUBLE_EQ(spearman(a, down), -1.0);
}

TEST(Spearman, HandComputedValue) {
  // b ranks 1, 4, 2, 3, 5: sum d^2 = 6, rho = 1 - 36 / 120.
  const std::vector<double> a = {1, 2, 3, 4, 5};
  const std::vector<double> b = {1, 4, 1.5, 3, 5};
  EXPECT_NEAR(spearman(a, b), 1.0 - 6.0 * 6.0 / 120.0, 1e-12);
  // Rank differences -2, -2, -2, 3, 3: sum d^2 = 30, rho = 1 - 180 / 120.
  const std::vector<double> c = {1, 2, 3, 4, 5};
  const std::vector<double> d = {3, 4, 5, 1, 2};
  EXPECT_NEAR(spearman(c, d), oracle::spearman_no_ties(c, d), 1e-12);
  EXPECT_NEAR(spearman(c, d), -0.5, 1e-12);
}

TEST(Spearman, MatchesOracleOnRandomData) {
  std::mt19937_64 gen(16);
  std::normal_distribution<double> nd;
  for (int t = 0; t < 20; ++t) {
    std::vector<double> a(13), b(13);
    for (auto& v : a) v = nd(gen);
    for (std::size_t i = 0; i < b.size(); ++i) b[i] = a[i] + nd(gen);
    EXPECT_NEAR(spearman(a, b), oracle::spearman_no_ties(a, b), 1e-12);
  }
}

TEST(Spearman, TiesUseAverageRanks) {
  const std::vector<double> v = {3, 1, 3, 2, 3};
  EXPECT_EQ(average_ranks(v), (std::vector<double>{4, 1, 4, 2, 4}));
  // Pearson of the average ranks, written out by hand.
  const std::vector<double> a = {1, 2, 2, 3};
  const std::vector<double> b = {1, 3, 2, 4};
  const std::vector<double> ra = {1, 2.5, 2.5, 4};
  const std::vector<double> rb = {1, 3, 2, 4};
  EXPECT_NEAR(spearman(a, b), oracle::pearson(ra, rb), 1e-12);
}

TEST(Spearman, InvariantToMonotoneTransforms) {
  std::mt19937_64 gen(17);
  std::normal_distribution<double> nd;
  std::vector<double> a(25), b(25);
  for (auto& v : a) v = nd(gen);
  for (std::size_t i = 0; i < b.size(); ++i) b[i] = a[i] * a[i] + nd(gen);
  std::vector<double> ta(a.size()), tb(b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    ta[i] = std::exp(a[i]);
    tb[i] = 3.0 * b[i] * b[i] * b[i] - 7.0;
  }
  EXPECT_NEAR(spearman(a, b), spearman(ta, tb), 1e-12);
  EXPECT_NEAR(spearman(a, b), spearman(b, a), 1e-15);
}

TEST(Spearman, Errors) {
  const std::vector<double> a = {1, 2, 3};
  const std::vector<double> flat = {2, 2, 2};
  const std::vector<double> two = {1, 2};
  const std::vector<double> one = {1};
  EXPECT_EQ(code_of([&] { spearman(a, flat); }), ErrorCode::kConstantInput);
  EXPECT_EQ(code_of([&] { spearman(a, two); }), ErrorCode::kLengthMismatch);
  EXPECT_EQ(code_of([&] { spearman(one, one); }), ErrorCode::kLengthMismatch);
  const std::vector<double> nan = {1, std::nan(""), 3};
  EXPECT_EQ(code_of([&] { spearman(a, nan); }), ErrorCode::kNonFiniteValue);
}

TEST(CorrelateCurves, UsesTheLayerIntersection) {
  LayerCurve cca;
  cca.kind = CurveKind::kCcaPhone;
  for (std::uint32_t l = 0; l <= 12; ++l) {
    cca.layers.push_back(l);
    cca.values.push_back(l <= 6 ? 0.1 * l : 1.2 - 0.1 * l);
  }
  LayerCurve task;
  for (std::uint32_t l = 0; l <= 12; l += 2) {
    task.layers.push_back(l);
    task.values.push_back(l <= 6 ? 50.0 + l : 62.0 - l + 0.01 * l);
  }
  // Even layers 0..12 give seven shared points with matching order.
  std::vector<double> a, t;
  for (std::size_t i = 0; i < task.layers.size(); ++i) {
    a.push_back(cca.values[task.layers[i]]);
    t.push_back(task.values[i]);
  }
  EXPECT_EQ(a.size(), 7u);
  EXPECT_NEAR(correlate_curves(cca, task, false), spearman(a, t), 1e-12);
}

TEST(CorrelateCurves, ErrorRateIsFlipped) {
  LayerCurve cca;
  cca.layers = {1, 2, 3, 4};
  cca.values = {0.1, 0.4, 0.3, 0.9};
  LayerCurve wer;
  wer.layers = {1, 2, 3, 4};
  wer.values = {30.0, 12.0, 20.0, 5.0};  // lower is better
  EXPECT_DOUBLE_EQ(correlate_curves(cca, wer, true), 1.0);
  EXPECT_DOUBLE_EQ(correlate_curves(cca, wer, false), -1.0);
}

TEST(CorrelateCurves, NeedsTwoSharedLayers) {
  LayerCurve a;
  a.layers = {0, 1, 2};
  a.values = {1, 2, 3};
  LayerCurve b;
  b.layers = {2, 5};
  b.values = {1, 2};
  EXPECT_EQ(code_of([&] { correlate_curves(a, b, false); }), ErrorCode::kNoCommonLayers);
  EXPECT_EQ(curve_kind_name(CurveKind::kCcaIntra), "cca_intra");
}
