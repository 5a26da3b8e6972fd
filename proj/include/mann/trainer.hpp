// Copyright 2026 The mannflow Authors
// SPDX-License-Identifier: Apache-2.0

// Minimal SGD trainer for the memory network. It exists to produce weights
// whose logit distributions look like those of a trained model; it makes no
// attempt to be fast.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mann/dataset.hpp"
#include "mann/error.hpp"
#include "mann/model.hpp"
#include "mann/random.hpp"
#include "mann/reference.hpp"

namespace mann {

struct Anneal {
  double factor = 0.5;
  std::size_t every_epochs = 25;
};

struct TrainConfig {
  double learning_rate = 0.01;
  std::size_t epochs = 50;
  std::size_t hops = 3;
  std::uint64_t seed = 1;
  double init_scale = 0.1;
  std::optional<Anneal> anneal;
  double clip_norm = 40.0;
  bool shared_embeddings = false;

  void validate() const {
    require(learning_rate > 0.0 && init_scale > 0.0, ErrorCode::kInvalidInput,
            "learning rate and init scale must be positive");
    require(hops >= 1, ErrorCode::kInvalidInput, "hops must be >= 1");
    require(clip_norm > 0.0, ErrorCode::kInvalidInput, "clip norm must be positive");
    if (anneal) {
      require(anneal->factor > 0.0 && anneal->every_epochs >= 1, ErrorCode::kInvalidInput, "bad anneal schedule");
    }
  }
};

/// Gradients share the layout of the weights they belong to.
using Gradients = ModelWeights;

struct LossAndGradients {
  double loss = 0.0;
  Vector logits;
  Gradients grad;
};

/// Softmax cross-entropy of the logits against `sample.answer`, with
/// gradients for all five weight matrices.
inline LossAndGradients forward_backward(const ModelWeights& model, const QASample& sample) {
  const auto& d = model.dims;
  const std::size_t n = sample.story.size();
  const std::size_t dim = d.embed_dim;
  require(n >= 1 && n <= d.memory_slots, ErrorCode::kInvalidInput, "story length outside [1, L]");
  require(sample.answer < d.output_dim, ErrorCode::kInvalidInput, "answer label out of range");

  // Forward, keeping every intermediate the backward pass needs.
  std::vector<Vector> mem_a, mem_c;
  for (const auto& s : sample.story) {
    mem_a.push_back(embed_sentence(model.emb_address, s));
    mem_c.push_back(embed_sentence(model.context_embedding(), s));
  }
  std::vector<Vector> keys, attn;
  Vector key = embed_sentence(model.emb_question, sample.question);
  Vector h;
  for (std::size_t t = 0; t < d.hops; ++t) {
    if (t > 0) key = h;
    Vector scores(n);
    for (std::size_t i = 0; i < n; ++i) scores[i] = dot(mem_a[i], key);
    const double peak = *std::max_element(scores.begin(), scores.end());
    double total = 0.0;
    for (double& s : scores) total += (s = std::exp(s - peak));
    for (double& s : scores) s /= total;
    h = controller_step(Vector(dim, 0.0), key, model.controller);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t e = 0; e < dim; ++e) h[e] += scores[i] * mem_c[i][e];
    }
    keys.push_back(key);
    attn.push_back(std::move(scores));
  }

  LossAndGradients out;
  out.logits = output_logits(h, model.output);
  const double zmax = *std::max_element(out.logits.begin(), out.logits.end());
  double zsum = 0.0;
  for (double z : out.logits) zsum += std::exp(z - zmax);
  const double log_norm = zmax + std::log(zsum);
  out.loss = log_norm - out.logits[sample.answer];
  require(std::isfinite(out.loss), ErrorCode::kDivergence, "non-finite loss");

  Gradients& g = out.grad = ModelWeights::zeros(d, model.shared_embeddings);

  // dL/dz = softmax(z) - onehot(y)
  Vector dz(out.logits.size());
  for (std::size_t i = 0; i < dz.size(); ++i) dz[i] = std::exp(out.logits[i] - log_norm);
  dz[sample.answer] -= 1.0;

  Vector dh(dim, 0.0);
  for (std::size_t i = 0; i < dz.size(); ++i) {
    for (std::size_t e = 0; e < dim; ++e) {
      g.output(i, e) += dz[i] * h[e];
      dh[e] += model.output(i, e) * dz[i];
    }
  }

  std::vector<Vector> dmem_a(n, Vector(dim, 0.0)), dmem_c(n, Vector(dim, 0.0));
  for (std::size_t t = d.hops; t-- > 0;) {
    const Vector& k = keys[t];
    const Vector& a = attn[t];
    Vector dk(dim, 0.0);
    // h = r + W_r k
    for (std::size_t r = 0; r < dim; ++r) {
      for (std::size_t c = 0; c < dim; ++c) {
        g.controller(r, c) += dh[r] * k[c];
        dk[c] += model.controller(r, c) * dh[r];
      }
    }
    // r = sum_i a_i m_c[i]
    Vector da(n);
    for (std::size_t i = 0; i < n; ++i) {
      da[i] = dot(dh, mem_c[i]);
      for (std::size_t e = 0; e < dim; ++e) dmem_c[i][e] += a[i] * dh[e];
    }
    // a = softmax(m_a[i] . k)
    const double mix = dot(a, da);
    for (std::size_t i = 0; i < n; ++i) {
      const double ds = a[i] * (da[i] - mix);
      for (std::size_t e = 0; e < dim; ++e) {
        dmem_a[i][e] += ds * k[e];
        dk[e] += ds * mem_a[i][e];
      }
    }
    dh = std::move(dk);  // k^t = h^{t-1} for t > 1
  }

  for (auto idx : sample.question.words()) {
    for (std::size_t e = 0; e < dim; ++e) g.emb_question(e, idx) += dh[e];
  }
  Matrix& gc = g.context_embedding();
  for (std::size_t i = 0; i < n; ++i) {
    for (auto idx : sample.story[i].words()) {
      for (std::size_t e = 0; e < dim; ++e) {
        g.emb_address(e, idx) += dmem_a[i][e];
        gc(e, idx) += dmem_c[i][e];
      }
    }
  }
  return out;
}

namespace detail {

template <typename Fn>
void for_each_matrix(ModelWeights& m, Fn&& fn) {
  fn(m.emb_address);
  if (!m.shared_embeddings) fn(m.emb_context);
  fn(m.emb_question);
  fn(m.controller);
  fn(m.output);
}

}  // namespace detail

inline double gradient_norm(Gradients& g) {
  double sq = 0.0;
  detail::for_each_matrix(g, [&](Matrix& m) {
    for (double v : m.data()) sq += v * v;
  });
  return std::sqrt(sq);
}

inline ModelWeights initialize_model(const Dimensions& dims, const TrainConfig& cfg, Rng& rng) {
  ModelWeights m = ModelWeights::zeros(dims, cfg.shared_embeddings);
  detail::for_each_matrix(m, [&](Matrix& w) {
    for (double& v : w.data()) v = rng.uniform(-cfg.init_scale, cfg.init_scale);
  });
  return m;
}

struct EpochStats {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double train_accuracy = 0.0;
};

struct TrainResult {
  ModelWeights model;
  std::vector<EpochStats> curve;
};

/// Plain per-sample SGD with global-norm gradient clipping.
inline TrainResult train(std::span<const QASample> dataset, Dimensions dims, const TrainConfig& cfg) {
  cfg.validate();
  require(!dataset.empty(), ErrorCode::kInvalidInput, "training dataset is empty");
  dims.hops = cfg.hops;
  dims.validate();

  Rng rng(cfg.seed);
  TrainResult out{initialize_model(dims, cfg, rng), {}};
  ModelWeights& model = out.model;
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  double lr = cfg.learning_rate;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t pos = 0; pos < order.size(); ++pos) {
      LossAndGradients step;
      try {
        step = forward_backward(model, dataset[order[pos]]);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kDivergence) throw;
        fail(ErrorCode::kDivergence, "epoch " + std::to_string(epoch) + ", sample " + std::to_string(order[pos]) +
                                         ": training diverged");
      }
      loss_sum += step.loss;
      if (exact_argmax(step.logits) == dataset[order[pos]].answer) ++correct;

      const double norm = gradient_norm(step.grad);
      const double scale = norm > cfg.clip_norm ? lr * cfg.clip_norm / norm : lr;
      ModelWeights& g = step.grad;
      auto apply = [&](Matrix& w, const Matrix& gw) {
        auto wd = w.data();
        auto gd = gw.data();
        for (std::size_t i = 0; i < wd.size(); ++i) wd[i] -= scale * gd[i];
      };
      apply(model.emb_address, g.emb_address);
      if (!model.shared_embeddings) apply(model.emb_context, g.emb_context);
      apply(model.emb_question, g.emb_question);
      apply(model.controller, g.controller);
      apply(model.output, g.output);
    }
    require(model.emb_address.all_finite() && model.output.all_finite(), ErrorCode::kDivergence,
            "epoch " + std::to_string(epoch) + ": weights became non-finite");
    out.curve.push_back({epoch, loss_sum / static_cast<double>(order.size()),
                         static_cast<double>(correct) / static_cast<double>(order.size())});
    if (cfg.anneal && epoch % cfg.anneal->every_epochs == 0) lr *= cfg.anneal->factor;
  }
  return out;
}

}  // namespace mann
