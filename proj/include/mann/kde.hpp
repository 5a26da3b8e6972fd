// Copyright 2026 The mannflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

namespace mann {

/// Rule-of-thumb bandwidth 1.06 * sd * n^(-1/5), floored at 1e-6 * (1 + |mean|)
/// so that zero-spread samples still give a finite density.
inline double silverman_bandwidth(std::span<const double> xs) {
  const double n = static_cast<double>(xs.size());
  if (xs.empty()) return 1e-6;
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= n;
  double var = 0.0;
  if (xs.size() >= 2) {
    for (double x : xs) var += (x - mean) * (x - mean);
    var /= n - 1.0;
  }
  const double floor = 1e-6 * (1.0 + std::abs(mean));
  return std::max(1.06 * std::sqrt(var) * std::pow(n, -0.2), floor);
}

/// One-dimensional Gaussian kernel density estimate.
///
/// Points are kept sorted so that evaluation only visits kernels close enough
/// to contribute: beyond kCutoff bandwidths exp() underflows to exactly zero,
/// so the windowed sum is bit-identical to the full sum in sorted order.
class GaussianKde {
 public:
  static constexpr double kCutoff = 38.7;

  GaussianKde() = default;
  explicit GaussianKde(std::vector<double> points) : points_(std::move(points)) {
    std::sort(points_.begin(), points_.end());
    bandwidth_ = silverman_bandwidth(points_);
  }
  GaussianKde(std::vector<double> points, double bandwidth) : points_(std::move(points)), bandwidth_(bandwidth) {
    std::sort(points_.begin(), points_.end());
  }

  bool empty() const noexcept { return points_.empty(); }
  std::size_t size() const noexcept { return points_.size(); }
  double bandwidth() const noexcept { return bandwidth_; }
  const std::vector<double>& points() const noexcept { return points_; }

  double density(double x) const {
    if (points_.empty()) return 0.0;
    const double reach = kCutoff * bandwidth_;
    auto lo = std::lower_bound(points_.begin(), points_.end(), x - reach);
    auto hi = std::upper_bound(lo, points_.end(), x + reach);
    double sum = 0.0;
    for (auto it = lo; it != hi; ++it) {
      const double u = (x - *it) / bandwidth_;
      sum += std::exp(-0.5 * u * u);
    }
    const double norm = static_cast<double>(points_.size()) * bandwidth_ * std::sqrt(2.0 * std::numbers::pi);
    return sum / norm;
  }

 private:
  std::vector<double> points_;
  double bandwidth_ = 1.0;
};

}  // namespace mann
