// Copyright 2026 The mannflow Authors
// SPDX-License-Identifier: Apache-2.0

// Experiment plumbing behind the command-line tool: train/test split, rho
// sweeps over the streaming engine, engine-vs-reference verification and the
// CSV writers.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "mann/dataset.hpp"
#include "mann/engine.hpp"
#include "mann/random.hpp"
#include "mann/reference.hpp"
#include "mann/thresholding.hpp"
#include "mann/trainer.hpp"

namespace mann {

inline const std::vector<double> kDefaultRhos = {1.0, 0.999, 0.99, 0.9, 0.5};

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Seeded shuffle, first 90% train and the rest test (both kept sorted).
inline Split split_dataset(std::size_t n, std::uint64_t seed, double train_fraction = 0.9) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(idx);
  const auto n_train = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(n)));
  Split s;
  s.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

inline Dataset select(const Dataset& data, const std::vector<std::size_t>& indices) {
  Dataset out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(data[i]);
  return out;
}

/// Streams every sample through one pipeline (story, question, flush, ...).
inline RunResult run_session(const ModelWeights& model, const Dataset& samples, const PipelineConfig& cfg) {
  RunResult r = Pipeline(cfg).run(session_tokens(model, samples));
  require(r.answers.size() == samples.size(), ErrorCode::kContractViolation, "answer count mismatch");
  return r;
}

struct SweepRow {
  std::string family;         // baseline | ith | ith_ordered
  std::optional<double> rho;  // absent for the baseline
  double accuracy = 0.0;
  double agreement_with_exact = 0.0;
  double mean_dot_products = 0.0;
  double mean_scalar_comparisons = 0.0;
  std::size_t finite_thresholds = 0;
  OpCounters counters;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  Split split;
  std::size_t num_classes = 0;
};

struct SweepOptions {
  std::vector<double> rhos = kDefaultRhos;
  std::uint64_t split_seed = 7;
  bool include_unordered = true;
  bool include_ordered = true;
  std::size_t queue_capacity = 4;
  bool threaded = true;
};

namespace detail {

inline SweepRow score_run(std::string family, std::optional<double> rho, const RunResult& run, const Dataset& test,
                          const std::vector<std::size_t>& exact_labels) {
  SweepRow row;
  row.family = std::move(family);
  row.rho = rho;
  std::size_t correct = 0, agree = 0, dots = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const Answer& a = run.answers[i];
    correct += a.label == test[i].answer;
    agree += a.label == exact_labels[i];
    dots += a.dot_products;
  }
  const double n = static_cast<double>(test.size());
  row.counters = run.counters.total();
  row.accuracy = static_cast<double>(correct) / n;
  row.agreement_with_exact = static_cast<double>(agree) / n;
  row.mean_dot_products = static_cast<double>(dots) / n;
  row.mean_scalar_comparisons = static_cast<double>(run.counters.output.logit_comparisons) / n;
  return row;
}

}  // namespace detail

/// Calibrates on the train split and evaluates the test split at every rho,
/// with and without silhouette ordering, plus one full-scan baseline row.
inline SweepResult run_sweep(const ModelWeights& model, const Dataset& data, const SweepOptions& opt) {
  require(!opt.rhos.empty(), ErrorCode::kInvalidInput, "rho list is empty");
  for (double rho : opt.rhos) {
    require(rho > 0.0 && rho <= 1.0, ErrorCode::kInvalidInput, fmt::format("rho {} outside (0, 1]", rho));
  }
  SweepResult out;
  out.split = split_dataset(data.size(), opt.split_seed);
  out.num_classes = model.dims.output_dim;
  const Dataset train = select(data, out.split.train);
  const Dataset test = select(data, out.split.test);
  require(!train.empty() && !test.empty(), ErrorCode::kInvalidInput, "dataset too small to split");

  PipelineConfig cfg;
  cfg.queue_capacity = opt.queue_capacity;
  cfg.threaded = opt.threaded;
  const RunResult baseline = run_session(model, test, cfg);
  std::vector<std::size_t> exact(test.size());
  for (std::size_t i = 0; i < test.size(); ++i) exact[i] = baseline.answers[i].label;
  out.rows.push_back(detail::score_run("baseline", std::nullopt, baseline, test, exact));
  out.rows.back().finite_thresholds = 0;

  std::vector<double> rhos = opt.rhos;
  std::sort(rhos.begin(), rhos.end(), std::greater<>());
  rhos.erase(std::unique(rhos.begin(), rhos.end()), rhos.end());

  const Calibrator calibrator(model, train);
  auto family = [&](const char* name, IndexOrdering ordering) {
    for (double rho : rhos) {
      cfg.thresholding = calibrator.table(rho, ordering);
      const RunResult run = run_session(model, test, cfg);
      out.rows.push_back(detail::score_run(name, rho, run, test, exact));
      out.rows.back().finite_thresholds = cfg.thresholding->finite_thresholds();
    }
  };
  if (opt.include_ordered) family("ith_ordered", IndexOrdering::kSilhouette);
  if (opt.include_unordered) family("ith", IndexOrdering::kIdentity);
  return out;
}

inline std::string format_real(double v) { return fmt::format("{:.6f}", v); }

inline std::string sweep_csv(const SweepResult& r) {
  std::string out =
      "family,rho,accuracy,agreement_with_exact,mean_dot_products,mean_scalar_comparisons,finite_thresholds,"
      "multiplications,weight_column_reads,logit_comparisons,exp_evaluations,divisions\n";
  for (const auto& row : r.rows) {
    out += fmt::format("{},{},{},{},{},{},{},{},{},{},{},{}\n", row.family, row.rho ? fmt::format("{}", *row.rho) : "",
                       format_real(row.accuracy), format_real(row.agreement_with_exact),
                       format_real(row.mean_dot_products), format_real(row.mean_scalar_comparisons),
                       row.finite_thresholds, row.counters.multiplications, row.counters.weight_column_reads,
                       row.counters.logit_comparisons, row.counters.exp_evaluations, row.counters.divisions);
  }
  return out;
}

inline std::string split_csv(const Split& s) {
  std::string out = "index,split\n";
  std::vector<std::pair<std::size_t, const char*>> all;
  for (auto i : s.train) all.emplace_back(i, "train");
  for (auto i : s.test) all.emplace_back(i, "test");
  std::sort(all.begin(), all.end());
  for (const auto& [i, name] : all) out += fmt::format("{},{}\n", i, name);
  return out;
}

inline std::string training_curve_csv(const std::vector<EpochStats>& curve) {
  std::string out = "epoch,loss,train_accuracy\n";
  for (const auto& e : curve) out += fmt::format("{},{:.9f},{}\n", e.epoch, e.mean_loss, format_real(e.train_accuracy));
  return out;
}

struct Mismatch {
  std::size_t sample = 0;
  std::size_t oracle_label = 0;
  std::size_t engine_label = 0;
  Vector oracle_logits;
  Vector engine_logits;
};

struct VerifyReport {
  std::size_t samples = 0;
  std::size_t correct = 0;
  std::uint64_t word_occurrences = 0;
  double max_logit_error = 0.0;
  std::optional<Mismatch> first_mismatch;
  StageCounters counters;

  double accuracy() const { return samples ? static_cast<double>(correct) / static_cast<double>(samples) : 0.0; }
  bool embedding_reads_match() const { return counters.input_write.weight_column_reads == word_occurrences; }
  bool ok() const { return !first_mismatch && embedding_reads_match() && counters.input_write.multiplications == 0; }
};

/// Runs every sample through the reference forward pass and the streaming
/// engine (no thresholding) and compares labels and logits.
inline VerifyReport verify_engine(const ModelWeights& model, const Dataset& data, double tolerance = 1e-9,
                                  const PipelineConfig& cfg = {}) {
  PipelineConfig plain = cfg;
  plain.thresholding.reset();
  const RunResult run = run_session(model, data, plain);
  VerifyReport rep;
  rep.samples = data.size();
  rep.counters = run.counters;
  for (std::size_t i = 0; i < data.size(); ++i) {
    rep.word_occurrences += total_word_occurrences(data[i]);
    const Inference ref = oracle_infer(model, data[i].story, data[i].question);
    const Answer& got = run.answers[i];
    rep.correct += got.label == data[i].answer;
    double err = got.logits.size() == ref.logits.size() ? 0.0 : INFINITY;
    for (std::size_t k = 0; k < ref.logits.size() && k < got.logits.size(); ++k) {
      err = std::max(err, std::abs(ref.logits[k] - got.logits[k]));
    }
    rep.max_logit_error = std::max(rep.max_logit_error, err);
    if (!rep.first_mismatch && (got.label != ref.label || !(err <= tolerance))) {
      rep.first_mismatch = Mismatch{i, ref.label, got.label, ref.logits, got.logits};
    }
  }
  return rep;
}

}  // namespace mann
