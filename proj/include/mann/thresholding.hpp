// Copyright 2026 The mannflow Authors
// SPDX-License-Identifier: Apache-2.0

// Inference thresholding: a data-driven early-exit search for the largest
// logit. Calibration gathers the logits a trained model produces on its
// training data, fits per-class densities for "this class is the answer"
// versus "it is not", and derives for every class the smallest logit whose
// posterior clears the constant rho. At inference the output layer visits
// classes in descending silhouette order and stops at the first logit that
// beats its class threshold.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "mann/counters.hpp"
#include "mann/dataset.hpp"
#include "mann/error.hpp"
#include "mann/kde.hpp"
#include "mann/matrix.hpp"
#include "mann/model.hpp"
#include "mann/reference.hpp"

namespace mann {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Logits observed during calibration, split per class.
struct LogitSampleSet {
  std::vector<std::vector<double>> positives;  // z_i where i was the (correct) prediction
  std::vector<std::vector<double>> negatives;  // z_i on correct samples whose answer is not i
  std::vector<std::uint64_t> class_counts;     // label frequency over the whole dataset
  std::uint64_t total_samples = 0;
  std::uint64_t correct_samples = 0;

  std::size_t num_classes() const noexcept { return class_counts.size(); }
};

inline LogitSampleSet collect_samples(const ModelWeights& model, std::span<const QASample> dataset) {
  require(!dataset.empty(), ErrorCode::kInvalidInput, "calibration dataset is empty");
  const std::size_t classes = model.dims.output_dim;
  LogitSampleSet out;
  out.positives.resize(classes);
  out.negatives.resize(classes);
  out.class_counts.assign(classes, 0);

  for (const QASample& sample : dataset) {
    require(sample.answer < classes, ErrorCode::kInvalidInput,
            "label " + std::to_string(sample.answer) + " outside " + std::to_string(classes) + " classes");
    ++out.class_counts[sample.answer];
    ++out.total_samples;
    const Inference inf = oracle_infer(model, sample.story, sample.question);
    if (inf.label != sample.answer) continue;
    ++out.correct_samples;
    for (std::size_t i = 0; i < classes; ++i) {
      (i == inf.label ? out.positives : out.negatives)[i].push_back(inf.logits[i]);
    }
  }
  require(out.correct_samples > 0, ErrorCode::kCalibrationFailed,
          "model predicted none of the " + std::to_string(out.total_samples) + " calibration samples correctly");
  return out;
}

struct DensityModel {
  std::vector<GaussianKde> positive;
  std::vector<GaussianKde> negative;
  std::vector<double> priors;
  std::vector<bool> thresholdable;  // at least two positive samples

  std::size_t num_classes() const noexcept { return priors.size(); }
};

inline DensityModel estimate_densities(const LogitSampleSet& samples) {
  const std::size_t classes = samples.num_classes();
  require(std::any_of(samples.positives.begin(), samples.positives.end(),
                      [](const auto& p) { return p.size() >= 2; }),
          ErrorCode::kCalibrationFailed, "no class has two or more positive logit samples");

  DensityModel d;
  d.positive.reserve(classes);
  d.negative.reserve(classes);
  d.priors.resize(classes);
  d.thresholdable.resize(classes);
  const double total =
      static_cast<double>(std::accumulate(samples.class_counts.begin(), samples.class_counts.end(), std::uint64_t{0}));
  for (std::size_t i = 0; i < classes; ++i) {
    d.positive.emplace_back(samples.positives[i]);
    d.negative.emplace_back(samples.negatives[i]);
    d.priors[i] = total > 0 ? static_cast<double>(samples.class_counts[i]) / total : 0.0;
    d.thresholdable[i] = samples.positives[i].size() >= 2;
  }
  return d;
}

/// p(y=i | z), normalised against the "not i" density. Returns 0 when both
/// class-conditional densities underflow.
inline double posterior(const DensityModel& density, std::size_t i, double z) {
  require(i < density.num_classes() && density.thresholdable[i], ErrorCode::kContractViolation,
          "posterior requested for non-thresholdable class " + std::to_string(i));
  const double prior = density.priors[i];
  const double pos = density.positive[i].density(z) * prior;
  const double neg = density.negative[i].density(z) * (1.0 - prior);
  const double norm = pos + neg;
  if (!(norm > 0.0)) return 0.0;
  return std::clamp(pos / norm, 0.0, 1.0);
}

/// theta_i = smallest observed positive logit whose posterior reaches rho;
/// +inf when none does.
inline std::vector<double> compute_thresholds(const DensityModel& density, const LogitSampleSet& samples,
                                              double rho) {
  require(rho > 0.0 && rho <= 1.0, ErrorCode::kInvalidInput, "rho must lie in (0, 1], got " + std::to_string(rho));
  std::vector<double> theta(density.num_classes(), kInf);
  for (std::size_t i = 0; i < theta.size(); ++i) {
    if (!density.thresholdable[i]) continue;
    for (double z : samples.positives[i]) {
      if (z < theta[i] && posterior(density, i, z) >= rho) theta[i] = z;
    }
  }
  return theta;
}

namespace detail {

/// Sum of |z - x| over a sorted range, using its prefix sums.
inline double abs_diff_sum(const std::vector<double>& sorted, const std::vector<double>& prefix, double z) {
  const auto split = static_cast<std::size_t>(std::upper_bound(sorted.begin(), sorted.end(), z) - sorted.begin());
  const double below = prefix[split];
  const double above = prefix.back() - below;
  const double n_below = static_cast<double>(split);
  const double n_above = static_cast<double>(sorted.size() - split);
  return (z * n_below - below) + (above - z * n_above);
}

inline std::vector<double> prefix_sums(const std::vector<double>& sorted) {
  std::vector<double> p(sorted.size() + 1, 0.0);
  for (std::size_t i = 0; i < sorted.size(); ++i) p[i + 1] = p[i] + sorted[i];
  return p;
}

}  // namespace detail

/// Mean silhouette of the positive cluster against the negative cluster for one
/// class, with |z - z'| as the distance. Returns -1 if either cluster is empty.
inline double silhouette_score(std::span<const double> positives, std::span<const double> negatives) {
  if (positives.empty() || negatives.empty()) return -1.0;
  std::vector<double> pos(positives.begin(), positives.end());
  std::vector<double> neg(negatives.begin(), negatives.end());
  std::sort(pos.begin(), pos.end());
  std::sort(neg.begin(), neg.end());
  const auto pos_prefix = detail::prefix_sums(pos);
  const auto neg_prefix = detail::prefix_sums(neg);

  double total = 0.0;
  for (double z : pos) {
    const double a =
        pos.size() > 1 ? detail::abs_diff_sum(pos, pos_prefix, z) / static_cast<double>(pos.size() - 1) : 0.0;
    const double b = detail::abs_diff_sum(neg, neg_prefix, z) / static_cast<double>(neg.size());
    const double denom = std::max(a, b);
    if (denom > 0.0) total += std::clamp((b - a) / denom, -1.0, 1.0);
  }
  return total / static_cast<double>(pos.size());
}

struct SilhouetteOrder {
  std::vector<double> scores;
  std::vector<std::size_t> order;  // descending score, ties by index
};

inline SilhouetteOrder silhouette_order(const LogitSampleSet& samples) {
  SilhouetteOrder out;
  const std::size_t classes = samples.num_classes();
  out.scores.resize(classes);
  for (std::size_t i = 0; i < classes; ++i) out.scores[i] = silhouette_score(samples.positives[i], samples.negatives[i]);
  out.order.resize(classes);
  std::iota(out.order.begin(), out.order.end(), std::size_t{0});
  std::stable_sort(out.order.begin(), out.order.end(),
                   [&](std::size_t x, std::size_t y) { return out.scores[x] > out.scores[y]; });
  return out;
}

enum class IndexOrdering { kSilhouette, kIdentity };

struct CalibrationInfo {
  std::uint64_t total_samples = 0;
  std::uint64_t correct_samples = 0;
  std::vector<std::uint64_t> positive_counts;

  friend bool operator==(const CalibrationInfo&, const CalibrationInfo&) = default;
};

struct ThresholdTable {
  double rho = 1.0;
  std::vector<double> theta;
  std::vector<std::size_t> order;
  std::vector<double> silhouette;
  IndexOrdering ordering = IndexOrdering::kSilhouette;
  CalibrationInfo calibration;

  std::size_t num_classes() const noexcept { return theta.size(); }

  std::size_t finite_thresholds() const {
    return static_cast<std::size_t>(std::count_if(theta.begin(), theta.end(), [](double t) { return t != kInf; }));
  }

  void validate() const {
    const std::size_t n = theta.size();
    require(rho > 0.0 && rho <= 1.0, ErrorCode::kInvalidInput, "rho must lie in (0, 1]");
    require(order.size() == n && silhouette.size() == n, ErrorCode::kInvalidInput,
            "threshold table arrays disagree in length");
    std::vector<bool> seen(n, false);
    for (std::size_t idx : order) {
      require(idx < n && !seen[idx], ErrorCode::kInvalidInput, "order is not a permutation");
      seen[idx] = true;
    }
    for (double s : silhouette) {
      require(s >= -1.0 && s <= 1.0, ErrorCode::kInvalidInput, "silhouette score outside [-1, 1]");
    }
    if (ordering == IndexOrdering::kSilhouette) {
      for (std::size_t k = 1; k < n; ++k) {
        require(silhouette[order[k - 1]] >= silhouette[order[k]], ErrorCode::kInvalidInput,
                "order is not sorted by descending silhouette");
      }
    }
  }

  friend bool operator==(const ThresholdTable&, const ThresholdTable&) = default;
};

/// Table that never exits early; used as the safety reference.
inline ThresholdTable never_exit_table(std::size_t classes) {
  ThresholdTable t;
  t.theta.assign(classes, kInf);
  t.order.resize(classes);
  std::iota(t.order.begin(), t.order.end(), std::size_t{0});
  t.silhouette.assign(classes, -1.0);
  return t;
}

/// Copy of `table` that visits classes in index order with the same thresholds.
inline ThresholdTable with_identity_order(ThresholdTable table) {
  std::iota(table.order.begin(), table.order.end(), std::size_t{0});
  table.ordering = IndexOrdering::kIdentity;
  return table;
}

struct ThresholdedResult {
  std::size_t label = 0;
  std::size_t dot_products = 0;
  bool early_exit = false;
};

/// Visits classes in table order; returns the first whose logit strictly
/// exceeds its threshold, else the exact argmax of all logits.
inline ThresholdedResult thresholded_argmax(std::span<const double> hidden, const Matrix& output,
                                            const ThresholdTable& table, OpCounters* counters = nullptr) {
  require(output.cols() == hidden.size(), ErrorCode::kInvalidInput, "output weight width does not match h");
  require(table.num_classes() == output.rows() && table.order.size() == output.rows(), ErrorCode::kInvalidInput,
          "threshold table covers " + std::to_string(table.num_classes()) + " classes, model has " +
              std::to_string(output.rows()));
  Vector logits(output.rows());
  ThresholdedResult out;
  for (std::size_t idx : table.order) {
    logits[idx] = dot(output.row(idx), hidden);
    ++out.dot_products;
    if (counters) {
      counters->multiplications += output.cols();
      counters->weight_column_reads += 1;
      counters->logit_comparisons += 1;
    }
    if (logits[idx] > table.theta[idx]) {
      out.label = idx;
      out.early_exit = true;
      return out;
    }
  }
  out.label = exact_argmax(logits, counters);
  return out;
}

/// Holds the calibration statistics that do not depend on rho, so a sweep can
/// derive one table per rho without re-running the model.
class Calibrator {
 public:
  Calibrator(const ModelWeights& model, std::span<const QASample> dataset)
      : samples_(collect_samples(model, dataset)),
        density_(estimate_densities(samples_)),
        silhouette_(silhouette_order(samples_)) {}

  ThresholdTable table(double rho, IndexOrdering ordering = IndexOrdering::kSilhouette) const {
    ThresholdTable t;
    t.rho = rho;
    t.theta = compute_thresholds(density_, samples_, rho);
    t.order = silhouette_.order;
    t.silhouette = silhouette_.scores;
    t.calibration.total_samples = samples_.total_samples;
    t.calibration.correct_samples = samples_.correct_samples;
    for (const auto& p : samples_.positives) t.calibration.positive_counts.push_back(p.size());
    if (ordering == IndexOrdering::kIdentity) t = with_identity_order(std::move(t));
    return t;
  }

  const LogitSampleSet& samples() const noexcept { return samples_; }
  const DensityModel& density() const noexcept { return density_; }
  const SilhouetteOrder& silhouette() const noexcept { return silhouette_; }

 private:
  LogitSampleSet samples_;
  DensityModel density_;
  SilhouetteOrder silhouette_;
};

inline ThresholdTable calibrate(const ModelWeights& model, std::span<const QASample> dataset, double rho,
                                IndexOrdering ordering = IndexOrdering::kSilhouette) {
  require(rho > 0.0 && rho <= 1.0, ErrorCode::kInvalidInput, "rho must lie in (0, 1], got " + std::to_string(rho));
  return Calibrator(model, dataset).table(rho, ordering);
}

}  // namespace mann
