// Copyright 2026 The mannflow Authors
// SPDX-License-Identifier: Apache-2.0

// mann: data generation, training, calibration, rho sweeps and
// engine verification for the streaming memory-network engine.
//
// Exit codes: 0 success, 1 usage, 2 data error, 3 verification failure.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ranges.h>

#include "mann/babi.hpp"
#include "mann/dataset_io.hpp"
#include "mann/harness.hpp"
#include "mann/model_io.hpp"
#include "mann/planted.hpp"
#include "mann/threshold_io.hpp"
#include "mann/trainer.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitVerify = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void check_rhos(const std::vector<double>& rhos) {
  for (double r : rhos) {
    if (!(r > 0.0 && r <= 1.0)) throw UsageError(fmt::format("--rho {} is outside (0, 1]", r));
  }
}

mann::ModelWeights load_model_with_hops(const std::string& path, std::size_t hops) {
  auto m = mann::load_model(path);
  if (hops > 0) m.dims.hops = hops;
  return m;
}

void print_counters(const char* name, const mann::OpCounters& c) {
  fmt::print("  {:<12} mult={} col_reads={} cmp={} exp={} div={}\n", name, c.multiplications,
             c.weight_column_reads, c.logit_comparisons, c.exp_evaluations, c.divisions);
}

struct GenArgs {
  mann::PlantedConfig planted;
  std::string data, model, babi;
};

int cmd_gen(const GenArgs& a) {
  if (!a.babi.empty()) {
    mann::ParsedDataset parsed;
    if (a.babi == "-") {
      parsed = mann::parse_babi(std::cin);
    } else {
      std::ifstream in(a.babi);
      if (!in) throw mann::Error(mann::ErrorCode::kIo, "cannot open " + a.babi);
      parsed = mann::parse_babi(in);
    }
    mann::DatasetBundle b{parsed.samples, parsed.vocab, parsed.vocab.size(), parsed.vocab.num_labels()};
    mann::save_dataset(b, a.data);
    std::size_t longest = 0;
    for (const auto& s : b.samples) longest = std::max(longest, s.story.size());
    fmt::print("parsed {} samples, vocab {}, labels {}, longest story {}, skipped multi-word {}\n", b.samples.size(),
               b.vocab_size, b.num_labels, longest, parsed.skipped_multiword);
    return kExitOk;
  }
  if (a.model.empty()) throw UsageError("gen needs --model for the planted task (or --babi)");
  const auto task = mann::synthesize_planted(a.planted);
  mann::DatasetBundle b{task.dataset, task.vocab, task.model.dims.vocab_size, task.model.dims.output_dim};
  mann::save_dataset(b, a.data);
  mann::save_model(task.model, a.model);
  const auto& d = task.model.dims;
  fmt::print("planted task: {} samples, V={} E={} I={} L={} T={}, seed {}\n", b.samples.size(), d.vocab_size,
             d.embed_dim, d.output_dim, d.memory_slots, d.hops, a.planted.seed);
  return kExitOk;
}

struct TrainArgs {
  std::string data, model, out;
  mann::TrainConfig cfg;
  std::size_t embed_dim = 20;
  std::uint64_t split_seed = 7;
  double anneal_factor = 0.0;
  std::size_t anneal_every = 0;
};

int cmd_train(TrainArgs a) {
  const auto bundle = mann::load_dataset(a.data);
  const auto split = mann::split_dataset(bundle.samples.size(), a.split_seed);
  const auto train_set = mann::select(bundle.samples, split.train);
  if (a.anneal_every > 0) a.cfg.anneal = mann::Anneal{a.anneal_factor, a.anneal_every};

  mann::Dimensions dims;
  dims.vocab_size = bundle.vocab_size;
  dims.output_dim = bundle.num_labels;
  dims.embed_dim = a.embed_dim;
  for (const auto& s : bundle.samples) dims.memory_slots = std::max(dims.memory_slots, s.story.size());
  const auto result = mann::train(train_set, dims, a.cfg);
  mann::save_model(result.model, a.model);
  if (!a.out.empty()) mann::io::write_file(a.out, mann::training_curve_csv(result.curve));

  std::size_t correct = 0;
  const auto test_set = mann::select(bundle.samples, split.test);
  for (const auto& s : test_set) correct += mann::oracle_infer(result.model, s.story, s.question).label == s.answer;
  const auto& last = result.curve.empty() ? mann::EpochStats{} : result.curve.back();
  fmt::print("trained {} epochs on {} samples: final loss {:.6f}, train acc {:.4f}, test acc {:.4f}\n",
             a.cfg.epochs, train_set.size(), last.mean_loss, last.train_accuracy,
             test_set.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(test_set.size()));
  return kExitOk;
}

struct CalibrateArgs {
  std::string model, data, table;
  std::vector<double> rhos;
  bool no_ordering = false;
  std::uint64_t split_seed = 7;
  std::size_t hops = 0;
};

int cmd_calibrate(const CalibrateArgs& a) {
  if (a.rhos.size() > 1) throw UsageError("calibrate takes a single --rho");
  const double rho = a.rhos.empty() ? 1.0 : a.rhos.front();
  check_rhos({rho});
  const auto model = load_model_with_hops(a.model, a.hops);
  const auto bundle = mann::load_dataset(a.data);
  const auto split = mann::split_dataset(bundle.samples.size(), a.split_seed);
  const auto table = mann::calibrate(model, mann::select(bundle.samples, split.train), rho,
                                     a.no_ordering ? mann::IndexOrdering::kIdentity : mann::IndexOrdering::kSilhouette);
  mann::save_table(table, a.table);
  fmt::print("rho {}: {} of {} classes thresholded ({} / {} calibration samples correct)\n", rho,
             table.finite_thresholds(), table.num_classes(), table.calibration.correct_samples,
             table.calibration.total_samples);
  const std::size_t shown = std::min<std::size_t>(5, table.order.size());
  for (std::size_t k = 0; k < shown; ++k) {
    const auto i = table.order[k];
    fmt::print("  class {:>4}  silhouette {:+.4f}  theta {}\n", i, table.silhouette[i],
               table.theta[i] == mann::kInf ? std::string("inf") : fmt::format("{:.6f}", table.theta[i]));
  }
  return kExitOk;
}

struct SweepArgs {
  std::string model, data, out;
  std::vector<double> rhos;
  bool no_ordering = false;
  bool sequential = false;
  std::uint64_t split_seed = 7;
  std::size_t queue_capacity = 4;
  std::size_t hops = 0;
};

int cmd_sweep(const SweepArgs& a) {
  mann::SweepOptions opt;
  if (!a.rhos.empty()) opt.rhos = a.rhos;
  check_rhos(opt.rhos);
  opt.split_seed = a.split_seed;
  opt.include_ordered = !a.no_ordering;
  opt.queue_capacity = a.queue_capacity;
  opt.threaded = !a.sequential;
  const auto model = load_model_with_hops(a.model, a.hops);
  const auto bundle = mann::load_dataset(a.data);
  const auto result = mann::run_sweep(model, bundle.samples, opt);
  const auto csv = mann::sweep_csv(result);
  if (a.out.empty()) {
    fmt::print("{}", csv);
  } else {
    mann::io::write_file(a.out, csv);
    mann::io::write_file(a.out + ".split.csv", mann::split_csv(result.split));
    for (const auto& row : result.rows) {
      fmt::print("{:<12} rho={:<6} acc={:.4f} agree={:.4f} dots={:.3f}/{}\n", row.family,
                 row.rho ? fmt::format("{}", *row.rho) : "-", row.accuracy, row.agreement_with_exact,
                 row.mean_dot_products, result.num_classes);
    }
  }
  return kExitOk;
}

struct VerifyArgs {
  std::string model, data;
  bool sequential = false;
  std::size_t queue_capacity = 4;
  std::size_t hops = 0;
};

int cmd_verify(const VerifyArgs& a) {
  const auto model = load_model_with_hops(a.model, a.hops);
  const auto bundle = mann::load_dataset(a.data);
  mann::PipelineConfig cfg;
  cfg.queue_capacity = a.queue_capacity;
  cfg.threaded = !a.sequential;
  const auto rep = mann::verify_engine(model, bundle.samples, 1e-9, cfg);
  fmt::print("verified {} samples: accuracy {:.4f}, max logit error {:.3e}\n", rep.samples, rep.accuracy(),
             rep.max_logit_error);
  fmt::print("counters:\n");
  print_counters("input_write", rep.counters.input_write);
  print_counters("mem", rep.counters.mem);
  print_counters("read", rep.counters.read);
  print_counters("output", rep.counters.output);
  print_counters("total", rep.counters.total());
  fmt::print("embedding column reads {} vs word occurrences {}\n", rep.counters.input_write.weight_column_reads,
             rep.word_occurrences);
  if (rep.first_mismatch) {
    const auto& m = *rep.first_mismatch;
    fmt::print(stderr, "MISMATCH at sample {}: reference label {}, engine label {}\n  reference logits [{}]\n  engine logits    [{}]\n",
               m.sample, m.oracle_label, m.engine_label, fmt::join(m.oracle_logits, ", "),
               fmt::join(m.engine_logits, ", "));
  }
  if (!rep.embedding_reads_match()) fmt::print(stderr, "embedding column read count does not match word count\n");
  return rep.ok() ? kExitOk : kExitVerify;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Streaming memory-network inference with early-exit output search"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "Generate the planted task (dataset + model) or parse bAbI text");
  g->add_option("--seed", gen.planted.seed, "Random seed");
  g->add_option("--entities", gen.planted.n_entities, "Number of entities")->check(CLI::PositiveNumber);
  g->add_option("--locations", gen.planted.n_locations, "Number of locations (answer classes)")->check(CLI::PositiveNumber);
  g->add_option("--facts", gen.planted.facts_per_story, "Facts per story")->check(CLI::PositiveNumber);
  g->add_option("--samples", gen.planted.n_samples, "Number of samples")->check(CLI::PositiveNumber);
  g->add_option("--data", gen.data, "Output dataset cache")->required();
  g->add_option("--model", gen.model, "Output model file (planted task)");
  g->add_option("--babi", gen.babi, "Parse a bAbI text file ('-' for stdin) instead of generating");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a model on a dataset's train split");
  t->add_option("--data", tr.data, "Dataset cache")->required();
  t->add_option("--model", tr.model, "Output model file")->required();
  t->add_option("--out", tr.out, "Training curve CSV");
  t->add_option("--hops", tr.cfg.hops, "Number of hops")->check(CLI::PositiveNumber);
  t->add_option("--epochs", tr.cfg.epochs, "Epochs");
  t->add_option("--lr", tr.cfg.learning_rate, "Learning rate")->check(CLI::PositiveNumber);
  t->add_option("--embed-dim", tr.embed_dim, "Embedding dimension")->check(CLI::PositiveNumber);
  t->add_option("--init-scale", tr.cfg.init_scale, "Uniform init half-width")->check(CLI::PositiveNumber);
  t->add_option("--anneal-factor", tr.anneal_factor, "Learning-rate decay factor");
  t->add_option("--anneal-every", tr.anneal_every, "Decay every k epochs (0 = off)");
  t->add_flag("--shared-embeddings", tr.cfg.shared_embeddings, "Use one embedding for address and context memory");
  t->add_option("--seed", tr.cfg.seed, "Random seed");
  t->add_option("--split-seed", tr.split_seed, "Seed of the 90/10 train/test split");

  CalibrateArgs cal;
  auto* c = app.add_subcommand("calibrate", "Calibrate a threshold table on the train split");
  c->add_option("--model", cal.model, "Model file")->required();
  c->add_option("--data", cal.data, "Dataset cache")->required();
  c->add_option("--table", cal.table, "Output threshold table")->required();
  c->add_option("--rho", cal.rhos, "Threshold constant in (0, 1]");
  c->add_flag("--no-ordering", cal.no_ordering, "Keep classes in index order");
  c->add_option("--split-seed", cal.split_seed, "Seed of the 90/10 train/test split");
  c->add_option("--hops", cal.hops, "Override the model's hop count");

  SweepArgs sw;
  auto* s = app.add_subcommand("sweep", "Accuracy and comparison count across rho values");
  s->add_option("--model", sw.model, "Model file")->required();
  s->add_option("--data", sw.data, "Dataset cache")->required();
  s->add_option("--rho", sw.rhos, "Threshold constant (repeatable)");
  s->add_option("--out", sw.out, "Output CSV (stdout when omitted)");
  s->add_flag("--no-ordering", sw.no_ordering, "Only evaluate index order, skip silhouette ordering");
  s->add_flag("--sequential", sw.sequential, "Run stages round-robin on one thread");
  s->add_option("--queue-capacity", sw.queue_capacity, "Inter-stage FIFO capacity")->check(CLI::PositiveNumber);
  s->add_option("--split-seed", sw.split_seed, "Seed of the 90/10 train/test split");
  s->add_option("--hops", sw.hops, "Override the model's hop count");

  VerifyArgs ve;
  auto* v = app.add_subcommand("verify", "Check the streaming engine against the reference forward pass");
  v->add_option("--model", ve.model, "Model file")->required();
  v->add_option("--data", ve.data, "Dataset cache")->required();
  v->add_flag("--sequential", ve.sequential, "Run stages round-robin on one thread");
  v->add_option("--queue-capacity", ve.queue_capacity, "Inter-stage FIFO capacity")->check(CLI::PositiveNumber);
  v->add_option("--hops", ve.hops, "Override the model's hop count");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*g) return cmd_gen(gen);
    if (*t) return cmd_train(tr);
    if (*c) return cmd_calibrate(cal);
    if (*s) return cmd_sweep(sw);
    if (*v) return cmd_verify(ve);
  } catch (const UsageError& e) {
    fmt::print(stderr, "usage error: {}\n", e.what());
    return kExitUsage;
  } catch (const mann::Error& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return e.code() == mann::ErrorCode::kInvalidInput ? kExitUsage : kExitData;
  }
  return kExitUsage;
}
