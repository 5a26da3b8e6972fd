// Copyright 2026 The mannflow Authors
// SPDX-License-Identifier: Apache-2.0

// Exact single-threaded forward pass of the memory network. Every other
// execution path (the streaming engine, thresholded output, trainer forward)
// is checked against the functions here.

#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>

#include "mann/counters.hpp"
#include "mann/error.hpp"
#include "mann/matrix.hpp"
#include "mann/model.hpp"

namespace mann {

namespace detail {
inline void count_mults(OpCounters* c, std::uint64_t n) {
  if (c) c->multiplications += n;
}
}  // namespace detail

/// Sums the columns of `w` selected by the sentence's word indices. Reads one
/// column per word occurrence and multiplies nothing.
inline Vector embed_sentence(const Matrix& w, const Sentence& s, OpCounters* counters = nullptr) {
  require(!s.empty(), ErrorCode::kInvalidInput, "cannot embed an empty sentence");
  Vector out(w.rows(), 0.0);
  for (std::uint32_t idx : s.words()) {
    require(idx < w.cols(), ErrorCode::kInvalidInput,
            "word index " + std::to_string(idx) + " out of range for vocabulary of " +
                std::to_string(w.cols()));
    for (std::size_t e = 0; e < w.rows(); ++e) out[e] += w(e, idx);
  }
  if (counters) counters->weight_column_reads += s.size();
  return out;
}

/// Content-based addressing: softmax of M_a[i]·k over the first `used_slots`
/// rows, max-shifted. One exp and one division per slot.
inline Vector address(const Matrix& memory_address, std::span<const double> key, std::size_t used_slots,
                      OpCounters* counters = nullptr) {
  require(used_slots >= 1, ErrorCode::kEmptyMemory, "addressing requires at least one written slot");
  require(used_slots <= memory_address.rows(), ErrorCode::kInvalidInput, "used_slots exceeds memory rows");
  require(key.size() == memory_address.cols(), ErrorCode::kInvalidInput, "key width mismatch");
  require(all_finite(key), ErrorCode::kInvalidInput, "key contains non-finite values");

  Vector scores(used_slots);
  double peak = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < used_slots; ++i) {
    scores[i] = dot(memory_address.row(i), key);
    peak = std::max(peak, scores[i]);
  }
  detail::count_mults(counters, used_slots * key.size());

  double total = 0.0;
  for (double& s : scores) {
    s = std::exp(s - peak);
    total += s;
  }
  for (double& s : scores) s /= total;
  if (counters) {
    counters->exp_evaluations += used_slots;
    counters->divisions += used_slots;
  }
  return scores;
}

/// r = sum_i a_i * M_c[i].
inline Vector read_vector(const Matrix& memory_context, std::span<const double> attention,
                          std::size_t used_slots, OpCounters* counters = nullptr) {
  require(attention.size() == used_slots, ErrorCode::kInvalidInput,
          "attention length " + std::to_string(attention.size()) + " != used slots " +
              std::to_string(used_slots));
  require(used_slots <= memory_context.rows(), ErrorCode::kInvalidInput, "used_slots exceeds memory rows");
  Vector r(memory_context.cols(), 0.0);
  for (std::size_t i = 0; i < used_slots; ++i) {
    const auto row = memory_context.row(i);
    for (std::size_t e = 0; e < r.size(); ++e) r[e] += attention[i] * row[e];
  }
  detail::count_mults(counters, used_slots * memory_context.cols());
  return r;
}

/// Hop 1 embeds the question; later hops reuse the previous controller output.
/// Exactly one of `question` / `previous` must be given, matching `hop`.
inline Vector read_key(std::size_t hop, const Sentence* question, const Vector* previous,
                       const Matrix& emb_question, OpCounters* counters = nullptr) {
  require(hop >= 1, ErrorCode::kContractViolation, "hops are numbered from 1");
  if (hop == 1) {
    require(question != nullptr && previous == nullptr, ErrorCode::kContractViolation,
            "first hop needs the question and no previous output");
    return embed_sentence(emb_question, *question, counters);
  }
  require(previous != nullptr && question == nullptr, ErrorCode::kContractViolation,
          "hop " + std::to_string(hop) + " needs the previous controller output");
  return *previous;
}

/// h = r + W_r k.
inline Vector controller_step(std::span<const double> read, std::span<const double> key, const Matrix& controller,
                              OpCounters* counters = nullptr) {
  require(controller.rows() == read.size() && controller.cols() == key.size(), ErrorCode::kInvalidInput,
          "controller shape does not match read/key vectors");
  Vector h(read.begin(), read.end());
  for (std::size_t e = 0; e < h.size(); ++e) h[e] += dot(controller.row(e), key);
  detail::count_mults(counters, controller.rows() * controller.cols());
  return h;
}

/// z_i = W_o[i,:]·h for every class.
inline Vector output_logits(std::span<const double> hidden, const Matrix& output, OpCounters* counters = nullptr) {
  require(output.cols() == hidden.size(), ErrorCode::kInvalidInput, "output weight width does not match h");
  Vector z(output.rows());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = dot(output.row(i), hidden);
  detail::count_mults(counters, output.rows() * output.cols());
  return z;
}

/// First index of the maximum, using exactly size-1 comparisons.
inline std::size_t exact_argmax(std::span<const double> z, OpCounters* counters = nullptr) {
  require(!z.empty(), ErrorCode::kInvalidInput, "argmax of an empty logit vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < z.size(); ++i) {
    if (z[i] > z[best]) best = i;
  }
  if (counters) counters->logit_comparisons += z.size() - 1;
  return best;
}

struct Inference {
  std::size_t label = 0;
  Vector logits;
  Vector hidden;  // final controller output h^T
};

/// Writes the story into a fresh memory and runs T hops, then the full output layer.
inline Inference oracle_infer(const ModelWeights& model, const Story& story, const Sentence& question) {
  require(!story.empty(), ErrorCode::kInvalidInput, "story must contain at least one sentence");
  require(story.size() <= model.dims.memory_slots, ErrorCode::kCapacity,
          "story has " + std::to_string(story.size()) + " sentences but memory holds " +
              std::to_string(model.dims.memory_slots));

  MemoryState memory(model.dims.memory_slots, model.dims.embed_dim);
  for (const Sentence& s : story) {
    memory.append(embed_sentence(model.emb_address, s), embed_sentence(model.context_embedding(), s));
  }

  Vector key = read_key(1, &question, nullptr, model.emb_question);
  Vector hidden;
  for (std::size_t t = 1; t <= model.dims.hops; ++t) {
    if (t > 1) key = read_key(t, nullptr, &hidden, model.emb_question);
    const Vector attention = address(memory.address(), key, memory.used_slots());
    const Vector read = read_vector(memory.context(), attention, memory.used_slots());
    hidden = controller_step(read, key, model.controller);
  }

  Inference out;
  out.logits = output_logits(hidden, model.output);
  out.label = exact_argmax(out.logits);
  out.hidden = std::move(hidden);
  return out;
}

}  // namespace mann
