// Copyright 2026 The mannflow Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include <gtest/gtest.h>

#include "mann/kde.hpp"
#include "mann/planted.hpp"
#include "mann/thresholding.hpp"
#include "test_support.hpp"

namespace mann {
namespace {

/// O(n^2) silhouette straight from the definition.
double brute_silhouette(const std::vector<double>& pos, const std::vector<double>& neg) {
  if (pos.empty() || neg.empty()) return -1.0;
  double total = 0.0;
  for (std::size_t i = 0; i < pos.size(); ++i) {
    double a = 0.0, b = 0.0;
    for (std::size_t j = 0; j < pos.size(); ++j) {
      if (j != i) a += std::abs(pos[i] - pos[j]);
    }
    a = pos.size() > 1 ? a / static_cast<double>(pos.size() - 1) : 0.0;
    for (double z : neg) b += std::abs(pos[i] - z);
    b /= static_cast<double>(neg.size());
    const double d = std::max(a, b);
    total += d > 0 ? (b - a) / d : 0.0;
  }
  return total / static_cast<double>(pos.size());
}

/// Direct O(n) Gaussian KDE sum.
double brute_kde(const std::vector<double>& xs, double bw, double x) {
  double s = 0.0;
  for (double p : xs) s += std::exp(-0.5 * ((x - p) / bw) * ((x - p) / bw));
  return s / (static_cast<double>(xs.size()) * bw * std::sqrt(2.0 * std::numbers::pi));
}

LogitSampleSet make_samples(std::vector<std::vector<double>> pos, std::vector<std::vector<double>> neg,
                            std::vector<std::uint64_t> counts) {
  LogitSampleSet s;
  s.positives = std::move(pos);
  s.negatives = std::move(neg);
  s.class_counts = std::move(counts);
  for (auto c : s.class_counts) s.total_samples += c;
  s.correct_samples = s.total_samples;
  return s;
}

const PlantedTask& planted() {
  static const PlantedTask task = [] {
    PlantedConfig cfg;
    cfg.n_samples = 2000;
    return synthesize_planted(cfg);
  }();
  return task;
}

// --- collect_samples ------------------------------------------------------

TEST(CollectSamples, PerfectModelGivesOnePositivePerSample) {
  // Two classes; W_o reads the question embedding so the model answers the question word.
  Dimensions d{2, 2, 2, 1, 1};
  auto m = ModelWeights::zeros(d);
  m.emb_question(0, 0) = m.emb_question(1, 1) = 1.0;
  m.controller = Matrix::identity(2);
  m.output = Matrix::identity(2);
  Dataset data;
  for (std::uint32_t i = 0; i < 10; ++i) data.push_back({Story{Sentence{0}}, Sentence{i % 2}, i % 2, {}});
  const LogitSampleSet s = collect_samples(m, data);
  EXPECT_EQ(s.correct_samples, 10u);
  EXPECT_EQ(s.positives[0].size() + s.positives[1].size(), 10u);
  EXPECT_EQ(s.negatives[0].size() + s.negatives[1].size(), 10u);
  EXPECT_EQ(s.positives[0].size(), 5u);
  EXPECT_EQ(s.negatives[0].size(), 5u);
  EXPECT_EQ(s.class_counts, (std::vector<std::uint64_t>{5, 5}));
}

TEST(CollectSamples, NothingCorrectFailsCalibration) {
  auto m = ModelWeights::zeros(Dimensions{2, 2, 2, 1, 1});  // always predicts 0
  const Dataset data{{Story{Sentence{0}}, Sentence{1}, 1, {}}};
  try {
    collect_samples(m, data);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kCalibrationFailed);
  }
}

TEST(CollectSamples, PlantedPositivesExceedNegatives) {
  const LogitSampleSet s = collect_samples(planted().model, planted().dataset);
  auto mean = [](const std::vector<double>& v) {
    double t = 0;
    for (double x : v) t += x;
    return t / static_cast<double>(v.size());
  };
  for (std::size_t i = 0; i < s.num_classes(); ++i) {
    ASSERT_FALSE(s.positives[i].empty());
    EXPECT_GT(mean(s.positives[i]), mean(s.negatives[i])) << i;
  }
}

// --- KDE / densities ------------------------------------------------------

TEST(Kde, SilvermanMatchesFormula) {
  const std::vector<double> xs{1.0, 2.0, 4.0, 7.0};
  const double mean = 3.5;
  double var = 0;
  for (double x : xs) var += (x - mean) * (x - mean);
  var /= 3.0;
  EXPECT_NEAR(silverman_bandwidth(xs), 1.06 * std::sqrt(var) * std::pow(4.0, -0.2), 1e-15);
}

TEST(Kde, ZeroVarianceUsesFloor) {
  const GaussianKde k(std::vector<double>{0.0, 0.0});
  EXPECT_EQ(k.bandwidth(), 1e-6);
  EXPECT_TRUE(std::isfinite(k.density(0.0)));
  EXPECT_GT(k.density(0.0), 0.0);
  const GaussianKde k2(std::vector<double>{5.0, 5.0});
  EXPECT_DOUBLE_EQ(k2.bandwidth(), 6e-6);
}

TEST(Kde, WindowedSumMatchesFullSum) {
  Rng rng(1);
  std::vector<double> xs(500);
  for (double& x : xs) x = rng.uniform(-20, 20) * rng.uniform();
  const GaussianKde k(xs);
  std::vector<double> sorted = xs;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 200; ++i) {
    const double x = rng.uniform(-30, 30);
    EXPECT_NEAR(k.density(x), brute_kde(sorted, k.bandwidth(), x), 1e-15);
  }
}

TEST(Kde, PeakDominatesTail) {
  const GaussianKde k(std::vector<double>{0.0, 0.1, -0.1, 0.05});
  EXPECT_GT(k.density(0.0), k.density(3.0));
}

TEST(Densities, BalancedPriors) {
  const auto s = make_samples({{1, 2}, {1, 2}, {1, 2}, {1, 2}}, {{0}, {0}, {0}, {0}}, {7, 7, 7, 7});
  const DensityModel d = estimate_densities(s);
  for (double p : d.priors) EXPECT_DOUBLE_EQ(p, 0.25);
}

TEST(Densities, FewPositivesAreNotThresholdable) {
  const auto s = make_samples({{1, 2}, {3}, {}}, {{0}, {0}, {0}}, {2, 1, 0});
  const DensityModel d = estimate_densities(s);
  EXPECT_TRUE(d.thresholdable[0]);
  EXPECT_FALSE(d.thresholdable[1]);
  EXPECT_FALSE(d.thresholdable[2]);
  const auto theta = compute_thresholds(d, s, 0.5);
  EXPECT_EQ(theta[1], kInf);
  EXPECT_EQ(theta[2], kInf);
  EXPECT_THROW(posterior(d, 1, 0.0), Error);
}

TEST(Densities, NoThresholdableClassFails) {
  const auto s = make_samples({{1}, {2}}, {{0}, {0}}, {1, 1});
  EXPECT_THROW(estimate_densities(s), Error);
}

// --- posterior ------------------------------------------------------------

TEST(Posterior, SymmetricDensitiesGiveHalf) {
  const auto s = make_samples({{0, 1, 2}, {5, 6}}, {{0, 1, 2}, {0, 1}}, {5, 5});
  const DensityModel d = estimate_densities(s);
  ASSERT_DOUBLE_EQ(d.priors[0], 0.5);
  for (double z : {-1.0, 0.5, 1.0, 2.5}) EXPECT_NEAR(posterior(d, 0, z), 0.5, 1e-12);
}

TEST(Posterior, VanishingNegativeDensityGivesOne) {
  const auto s = make_samples({{100, 101}, {1, 2}}, {{0, 0.1}, {0, 0.1}}, {1, 1});
  const DensityModel d = estimate_densities(s);
  EXPECT_EQ(posterior(d, 0, 100.5), 1.0);
}

TEST(Posterior, MonotoneOnBimodalGrid) {
  // Two well separated Gaussian clusters, drawn by Box-Muller.
  Rng rng(17);
  auto normal = [&](double mu, double sd) {
    const double u1 = 1.0 - rng.uniform(), u2 = rng.uniform();
    return mu + sd * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  };
  std::vector<double> pos(400), neg(400);
  for (double& x : pos) x = normal(4.0, 0.7);
  for (double& x : neg) x = normal(0.0, 0.7);
  const auto two = make_samples({pos, pos}, {neg, neg}, {1, 1});
  const DensityModel d = estimate_densities(two);
  const double lo = *std::min_element(neg.begin(), neg.end());
  const double hi = *std::max_element(pos.begin(), pos.end());
  double prev = 0.0;
  for (int g = 0; g <= 2000; ++g) {
    const double z = lo + (hi - lo) * g / 2000.0;
    const double p = posterior(d, 0, z);
    ASSERT_GE(p, prev - 1e-12) << z;
    prev = p;
  }
}

TEST(Posterior, BoundedOnPlantedLogits) {
  const LogitSampleSet s = collect_samples(planted().model, planted().dataset);
  const DensityModel d = estimate_densities(s);
  for (std::size_t i = 0; i < s.num_classes(); ++i) {
    if (!d.thresholdable[i]) continue;
    for (int g = -200; g <= 200; ++g) {
      const double p = posterior(d, i, g * 0.05);
      ASSERT_GE(p, 0.0);
      ASSERT_LE(p, 1.0);
    }
  }
}

// --- thresholds -----------------------------------------------------------

TEST(Thresholds, TinyRhoGivesMinimumPositive) {
  const auto s = make_samples({{3, 5, 4}, {1, 9}}, {{0, 1}, {2, 3}}, {3, 2});
  const DensityModel d = estimate_densities(s);
  const auto theta = compute_thresholds(d, s, 1e-300);
  EXPECT_EQ(theta[0], 3.0);
  EXPECT_EQ(theta[1], 1.0);
}

TEST(Thresholds, UnreachableRhoGivesInfinity) {
  // Positives sit on top of negatives, so the posterior never reaches 1.
  const auto s = make_samples({{0, 1}, {5, 6}}, {{0, 1, 0.5}, {0, 1}}, {1, 1});
  const auto theta = compute_thresholds(estimate_densities(s), s, 1.0);
  EXPECT_EQ(theta[0], kInf);
}

TEST(Thresholds, RhoOutsideRangeIsInvalid) {
  const auto s = make_samples({{0, 1}}, {{2}}, {1});
  const DensityModel d = estimate_densities(s);
  for (double rho : {0.0, -0.5, 1.5}) {
    try {
      compute_thresholds(d, s, rho);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::kInvalidInput);
    }
  }
}

TEST(Thresholds, NestedAcrossRhoSweep) {
  const LogitSampleSet s = collect_samples(planted().model, planted().dataset);
  const DensityModel d = estimate_densities(s);
  std::vector<double> rhos{1.0, 0.9999, 0.999, 0.99, 0.9, 0.7, 0.5, 0.2, 0.01};
  std::vector<double> prev = compute_thresholds(d, s, rhos[0]);
  for (std::size_t r = 1; r < rhos.size(); ++r) {
    const auto theta = compute_thresholds(d, s, rhos[r]);
    for (std::size_t i = 0; i < theta.size(); ++i) EXPECT_LE(theta[i], prev[i]) << rhos[r];
    prev = theta;
  }
}

// --- silhouette -----------------------------------------------------------

TEST(Silhouette, SeparatedClustersNearOne) {
  const std::vector<double> pos{10, 10.1}, neg{0, 0.1};
  const double s = silhouette_score(pos, neg);
  EXPECT_NEAR(s, brute_silhouette(pos, neg), 1e-12);
  EXPECT_NEAR(s, 0.99, 0.001);
}

TEST(Silhouette, IdenticalSetsNearZero) {
  const std::vector<double> xs{1, 2, 3, 4, 5};
  EXPECT_NEAR(silhouette_score(xs, xs), brute_silhouette(xs, xs), 1e-12);
  EXPECT_LT(std::abs(silhouette_score(xs, xs)), 0.25);
}

TEST(Silhouette, MatchesBruteForceOnRandomSets) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    Rng rng(seed);
    std::vector<double> pos(1 + rng.index(60)), neg(1 + rng.index(60));
    const double shift = rng.uniform(-3, 3);
    for (double& x : pos) x = shift + rng.uniform(-2, 2);
    for (double& x : neg) x = std::round(rng.uniform(-2, 2) * 4) / 4;  // ties
    const double s = silhouette_score(pos, neg);
    ASSERT_NEAR(s, brute_silhouette(pos, neg), 1e-9) << seed;
    ASSERT_GE(s, -1.0);
    ASSERT_LE(s, 1.0);
  }
}

TEST(Silhouette, MissingNegativesSortLast) {
  const auto s = make_samples({{5, 6}, {1, 2}, {3, 4}}, {{}, {0, 0.5}, {3, 4}}, {2, 2, 2});
  const SilhouetteOrder o = silhouette_order(s);
  EXPECT_EQ(o.scores[0], -1.0);
  EXPECT_EQ(o.order.back(), 0u);
  EXPECT_EQ(o.order.front(), 1u);
}

TEST(Silhouette, TiesBrokenByIndex) {
  const auto s = make_samples({{1, 2}, {1, 2}, {}}, {{5}, {5}, {5}}, {2, 2, 0});
  const SilhouetteOrder o = silhouette_order(s);
  EXPECT_EQ(o.order, (std::vector<std::size_t>{0, 1, 2}));
}

// --- thresholded_argmax ---------------------------------------------------

TEST(ThresholdedArgmax, InfiniteThresholdsEqualExactArgmax) {
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    Rng rng(seed);
    const std::size_t classes = 1 + rng.index(32), e = 1 + rng.index(8);
    const Matrix w = testing::random_matrix(classes, e, rng);
    const Vector h = testing::random_vector(e, rng);
    ThresholdTable t = never_exit_table(classes);
    rng.shuffle(t.order);
    t.ordering = IndexOrdering::kIdentity;
    const auto r = thresholded_argmax(h, w, t);
    ASSERT_EQ(r.label, exact_argmax(output_logits(h, w)));
    ASSERT_EQ(r.dot_products, classes);
    ASSERT_FALSE(r.early_exit);
  }
}

TEST(ThresholdedArgmax, NegativeInfinityExitsImmediately) {
  Rng rng(2);
  const Matrix w = testing::random_matrix(6, 3, rng);
  ThresholdTable t = never_exit_table(6);
  t.order = {4, 0, 1, 2, 3, 5};
  t.theta[4] = -kInf;
  OpCounters c;
  const auto r = thresholded_argmax(testing::random_vector(3, rng), w, t, &c);
  EXPECT_EQ(r.label, 4u);
  EXPECT_EQ(r.dot_products, 1u);
  EXPECT_TRUE(r.early_exit);
  EXPECT_EQ(c.multiplications, 3u);
  EXPECT_EQ(c.logit_comparisons, 1u);
}

TEST(ThresholdedArgmax, StrictInequality) {
  Matrix w(2, 1);
  w(0, 0) = 1.0;
  w(1, 0) = 2.0;
  ThresholdTable t = never_exit_table(2);
  t.theta[0] = 1.0;
  EXPECT_FALSE(thresholded_argmax(Vector{1.0}, w, t).early_exit);  // z0 == theta0
  t.theta[0] = 0.999;
  EXPECT_TRUE(thresholded_argmax(Vector{1.0}, w, t).early_exit);
}

TEST(ThresholdedArgmax, TableSizeMismatch) {
  EXPECT_THROW(thresholded_argmax(Vector{1.0}, Matrix(3, 1), never_exit_table(2)), Error);
}

TEST(ThresholdedArgmax, DotProductsNonIncreasingInRhoPerSample) {
  const PlantedTask& task = planted();
  const Calibrator cal(task.model, task.dataset);
  const std::vector<double> rhos{1.0, 0.999, 0.99, 0.9, 0.5};
  for (auto ordering : {IndexOrdering::kSilhouette, IndexOrdering::kIdentity}) {
    std::vector<ThresholdTable> tables;
    for (double rho : rhos) tables.push_back(cal.table(rho, ordering));
    for (std::size_t n = 0; n < 300; ++n) {
      const auto& s = task.dataset[n];
      const Vector h = oracle_infer(task.model, s.story, s.question).hidden;
      std::size_t prev = task.model.dims.output_dim;
      for (const auto& t : tables) {
        const std::size_t dots = thresholded_argmax(h, task.model.output, t).dot_products;
        ASSERT_LE(dots, prev);
        prev = dots;
      }
    }
  }
}

// --- calibrate ------------------------------------------------------------

TEST(Calibrate, DeterministicAndHasFiniteThreshold) {
  const PlantedTask& task = planted();
  const ThresholdTable a = calibrate(task.model, task.dataset, 1.0);
  const ThresholdTable b = calibrate(task.model, task.dataset, 1.0);
  EXPECT_EQ(a, b);
  EXPECT_GE(a.finite_thresholds(), 1u);
  a.validate();
}

TEST(Calibrate, InvariantToDatasetOrder) {
  const PlantedTask& task = planted();
  Dataset shuffled = task.dataset;
  Rng rng(99);
  rng.shuffle(shuffled);
  for (double rho : {1.0, 0.9}) {
    const ThresholdTable a = calibrate(task.model, task.dataset, rho);
    const ThresholdTable b = calibrate(task.model, shuffled, rho);
    EXPECT_EQ(a.theta, b.theta);
    EXPECT_EQ(a.order, b.order);
    for (std::size_t i = 0; i < a.silhouette.size(); ++i) EXPECT_NEAR(a.silhouette[i], b.silhouette[i], 1e-12);
  }
}

TEST(Calibrate, RhoOneKeepsAgreementOnPlantedTask) {
  const PlantedTask& task = planted();
  const ThresholdTable t = calibrate(task.model, task.dataset, 1.0);
  std::size_t agree = 0, dots = 0;
  for (const auto& s : task.dataset) {
    const Inference ref = oracle_infer(task.model, s.story, s.question);
    const auto r = thresholded_argmax(ref.hidden, task.model.output, t);
    agree += r.label == ref.label;
    dots += r.dot_products;
  }
  const double n = static_cast<double>(task.dataset.size());
  EXPECT_GE(agree / n, 0.999);
  EXPECT_LT(dots / n, static_cast<double>(task.model.dims.output_dim));
}

TEST(Calibrate, IdentityOrderingKeepsThresholds) {
  const Calibrator cal(planted().model, planted().dataset);
  const ThresholdTable s = cal.table(0.99);
  const ThresholdTable id = cal.table(0.99, IndexOrdering::kIdentity);
  EXPECT_EQ(s.theta, id.theta);
  EXPECT_EQ(id.order, (std::vector<std::size_t>{0, 1, 2, 3, 4, 5}));
  id.validate();
}

TEST(ThresholdTable, ValidateRejectsBrokenTables) {
  ThresholdTable t = never_exit_table(3);
  t.order = {0, 0, 1};
  EXPECT_THROW(t.validate(), Error);
  t = never_exit_table(3);
  t.silhouette = {0.1, 0.5, 0.2};  // not descending along the order
  EXPECT_THROW(t.validate(), Error);
  t.ordering = IndexOrdering::kIdentity;
  EXPECT_NO_THROW(t.validate());
  t.rho = 0.0;
  EXPECT_THROW(t.validate(), Error);
}

}  // namespace
}  // namespace mann
