// Copyright 2026 The mannflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>

namespace mann {

/// Tallies of the work a run performed. Used as the energy proxy in reports.
struct OpCounters {
  std::uint64_t multiplications = 0;
  std::uint64_t weight_column_reads = 0;
  std::uint64_t logit_comparisons = 0;
  std::uint64_t exp_evaluations = 0;
  std::uint64_t divisions = 0;

  void reset() { *this = OpCounters{}; }

  OpCounters& operator+=(const OpCounters& o) {
    multiplications += o.multiplications;
    weight_column_reads += o.weight_column_reads;
    logit_comparisons += o.logit_comparisons;
    exp_evaluations += o.exp_evaluations;
    divisions += o.divisions;
    return *this;
  }

  friend OpCounters operator+(OpCounters a, const OpCounters& b) { return a += b; }
  friend bool operator==(const OpCounters&, const OpCounters&) = default;
};

}  // namespace mann
