// Copyright 2026 The mannflow Authors
// SPDX-License-Identifier: Apache-2.0

// Shared generators and independent dense oracles for the test suites.

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mann/dataset.hpp"
#include "mann/matrix.hpp"
#include "mann/model.hpp"
#include "mann/random.hpp"

namespace mann::testing {

inline Eigen::MatrixXd to_eigen(const Matrix& m) {
  Eigen::MatrixXd out(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) out(r, c) = m(r, c);
  }
  return out;
}

inline Eigen::VectorXd to_eigen(const Vector& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

/// Bag-of-words count vector, repeated indices counted with multiplicity.
inline Eigen::VectorXd bow(const Sentence& s, std::size_t vocab) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(vocab));
  for (auto w : s.words()) out(w) += 1.0;
  return out;
}

inline void fill_uniform(Matrix& m, Rng& rng, double scale) {
  for (double& v : m.data()) v = rng.uniform(-scale, scale);
}

inline Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0) {
  Matrix m(rows, cols);
  fill_uniform(m, rng, scale);
  return m;
}

inline Vector random_vector(std::size_t n, Rng& rng, double scale = 1.0) {
  Vector v(n);
  for (double& x : v) x = rng.uniform(-scale, scale);
  return v;
}

inline ModelWeights random_model(const Dimensions& d, Rng& rng, double scale = 0.5, bool shared = false) {
  ModelWeights m = ModelWeights::zeros(d, shared);
  fill_uniform(m.emb_address, rng, scale);
  if (!shared) fill_uniform(m.emb_context, rng, scale);
  fill_uniform(m.emb_question, rng, scale);
  fill_uniform(m.controller, rng, scale);
  fill_uniform(m.output, rng, scale);
  return m;
}

inline Dimensions random_dims(Rng& rng, std::size_t max_v, std::size_t max_e, std::size_t max_i, std::size_t max_l,
                              std::size_t max_t) {
  Dimensions d;
  d.vocab_size = 1 + rng.index(max_v);
  d.embed_dim = 1 + rng.index(max_e);
  d.output_dim = 1 + rng.index(max_i);
  d.memory_slots = 1 + rng.index(max_l);
  d.hops = 1 + rng.index(max_t);
  return d;
}

inline Sentence random_sentence(std::size_t vocab, Rng& rng, std::size_t max_len = 6) {
  std::vector<std::uint32_t> w(1 + rng.index(max_len));
  for (auto& x : w) x = static_cast<std::uint32_t>(rng.index(vocab));
  return Sentence(std::move(w));
}

inline QASample random_sample(const Dimensions& d, Rng& rng) {
  QASample s;
  const std::size_t n = 1 + rng.index(d.memory_slots);
  for (std::size_t i = 0; i < n; ++i) s.story.push_back(random_sentence(d.vocab_size, rng));
  s.question = random_sentence(d.vocab_size, rng);
  s.answer = rng.index(d.output_dim);
  return s;
}

inline Dataset random_dataset(const Dimensions& d, Rng& rng, std::size_t n) {
  Dataset out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(random_sample(d, rng));
  return out;
}

/// Dense reference forward pass written directly against Eigen.
struct DenseForward {
  Eigen::VectorXd logits;
  std::size_t label = 0;
};

inline DenseForward dense_forward(const ModelWeights& m, const Story& story, const Sentence& q) {
  const auto V = m.dims.vocab_size;
  const Eigen::MatrixXd A = to_eigen(m.emb_address);
  const Eigen::MatrixXd C = to_eigen(m.context_embedding());
  const Eigen::MatrixXd B = to_eigen(m.emb_question);
  const Eigen::MatrixXd R = to_eigen(m.controller);
  const Eigen::MatrixXd W = to_eigen(m.output);
  Eigen::MatrixXd Ma(story.size(), m.dims.embed_dim), Mc(story.size(), m.dims.embed_dim);
  for (std::size_t i = 0; i < story.size(); ++i) {
    Ma.row(static_cast<Eigen::Index>(i)) = (A * bow(story[i], V)).transpose();
    Mc.row(static_cast<Eigen::Index>(i)) = (C * bow(story[i], V)).transpose();
  }
  Eigen::VectorXd k = B * bow(q, V);
  Eigen::VectorXd h;
  for (std::size_t t = 0; t < m.dims.hops; ++t) {
    Eigen::VectorXd s = Ma * k;
    s = (s.array() - s.maxCoeff()).exp();
    s /= s.sum();
    h = Mc.transpose() * s + R * k;
    k = h;
  }
  DenseForward out;
  out.logits = W * h;
  for (Eigen::Index i = 1; i < out.logits.size(); ++i) {
    if (out.logits(i) > out.logits(static_cast<Eigen::Index>(out.label))) out.label = static_cast<std::size_t>(i);
  }
  return out;
}

inline std::string data_path(const std::string& name) { return std::string(MANN_TEST_DATA_DIR) + "/" + name; }

}  // namespace mann::testing

#include "mann/trainer.hpp"

namespace mann::testing {

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t entries = 0;
};

/// Compares forward_backward gradients with central differences of the loss
/// on every weight entry. Relative error |a - n| / max(|a|, |n|, 1e-6).
inline GradCheck finite_difference_check(const ModelWeights& model, const QASample& sample, double step = 1e-5) {
  const LossAndGradients analytic = forward_backward(model, sample);
  GradCheck out;
  ModelWeights probe = model;
  auto check = [&](Matrix ModelWeights::*field) {
    Matrix& w = probe.*field;
    const Matrix& g = analytic.grad.*field;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double saved = w.data()[i];
      w.data()[i] = saved + step;
      const double up = forward_backward(probe, sample).loss;
      w.data()[i] = saved - step;
      const double down = forward_backward(probe, sample).loss;
      w.data()[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = g.data()[i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
      out.max_rel_error = std::max(out.max_rel_error, rel);
      ++out.entries;
    }
  };
  check(&ModelWeights::emb_address);
  if (!model.shared_embeddings) check(&ModelWeights::emb_context);
  check(&ModelWeights::emb_question);
  check(&ModelWeights::controller);
  check(&ModelWeights::output);
  return out;
}

}  // namespace mann::testing
