// Copyright 2026 The mannflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "mann/error.hpp"
#include "mann/matrix.hpp"

namespace mann {

struct Dimensions {
  std::size_t vocab_size = 1;     // V
  std::size_t embed_dim = 1;      // E
  std::size_t output_dim = 1;     // I
  std::size_t memory_slots = 1;   // L
  std::size_t hops = 3;           // T

  void validate() const {
    require(vocab_size >= 1 && embed_dim >= 1 && output_dim >= 1 && memory_slots >= 1 && hops >= 1,
            ErrorCode::kInvalidInput, "all dimensions must be >= 1");
  }

  friend bool operator==(const Dimensions&, const Dimensions&) = default;
};

/// A bag of word indices. Repeated indices are meaningful (they count twice).
class Sentence {
 public:
  Sentence() = default;
  explicit Sentence(std::vector<std::uint32_t> words) : words_(std::move(words)) {
    require(!words_.empty(), ErrorCode::kInvalidInput, "sentence must not be empty");
  }
  Sentence(std::initializer_list<std::uint32_t> words) : Sentence(std::vector<std::uint32_t>(words)) {}

  const std::vector<std::uint32_t>& words() const noexcept { return words_; }
  std::size_t size() const noexcept { return words_.size(); }
  bool empty() const noexcept { return words_.empty(); }

  friend bool operator==(const Sentence&, const Sentence&) = default;

 private:
  std::vector<std::uint32_t> words_;
};

using Story = std::vector<Sentence>;

/// Trained parameters. When `shared_embeddings` is set the context memory is
/// written with the address embedding and `emb_context` stays empty.
struct ModelWeights {
  Dimensions dims;
  bool shared_embeddings = false;
  Matrix emb_address;   // E x V
  Matrix emb_context;   // E x V, empty when shared
  Matrix emb_question;  // E x V
  Matrix controller;    // E x E
  Matrix output;        // I x E

  static ModelWeights zeros(const Dimensions& d, bool shared = false) {
    d.validate();
    ModelWeights w;
    w.dims = d;
    w.shared_embeddings = shared;
    w.emb_address = Matrix(d.embed_dim, d.vocab_size);
    if (!shared) w.emb_context = Matrix(d.embed_dim, d.vocab_size);
    w.emb_question = Matrix(d.embed_dim, d.vocab_size);
    w.controller = Matrix(d.embed_dim, d.embed_dim);
    w.output = Matrix(d.output_dim, d.embed_dim);
    return w;
  }

  const Matrix& context_embedding() const { return shared_embeddings ? emb_address : emb_context; }
  Matrix& context_embedding() { return shared_embeddings ? emb_address : emb_context; }

  void validate() const {
    dims.validate();
    const auto e = dims.embed_dim, v = dims.vocab_size;
    require_shape(emb_address, e, v, "W_emb_a");
    if (shared_embeddings) {
      require(emb_context.size() == 0, ErrorCode::kInvalidInput,
              "W_emb_c must be empty when embeddings are shared");
    } else {
      require_shape(emb_context, e, v, "W_emb_c");
    }
    require_shape(emb_question, e, v, "W_emb_q");
    require_shape(controller, e, e, "W_r");
    require_shape(output, dims.output_dim, e, "W_o");
    for (const Matrix* m : {&emb_address, &emb_context, &emb_question, &controller, &output}) {
      require(m->all_finite(), ErrorCode::kInvalidInput, "model weights contain non-finite values");
    }
  }

  friend bool operator==(const ModelWeights&, const ModelWeights&) = default;
};

/// Address memory M_a and context memory M_c, one row per written sentence.
class MemoryState {
 public:
  MemoryState() = default;
  MemoryState(std::size_t slots, std::size_t embed_dim)
      : address_(slots, embed_dim), context_(slots, embed_dim) {}

  std::size_t capacity() const noexcept { return address_.rows(); }
  std::size_t used_slots() const noexcept { return used_; }
  bool full() const noexcept { return used_ >= capacity(); }

  const Matrix& address() const noexcept { return address_; }
  const Matrix& context() const noexcept { return context_; }

  void append(std::span<const double> address_row, std::span<const double> context_row) {
    require(!full(), ErrorCode::kCapacity,
            "memory is full (" + std::to_string(capacity()) + " slots)");
    require(address_row.size() == address_.cols() && context_row.size() == context_.cols(),
            ErrorCode::kInvalidInput, "memory row width mismatch");
    std::copy(address_row.begin(), address_row.end(), address_.row(used_).begin());
    std::copy(context_row.begin(), context_row.end(), context_.row(used_).begin());
    ++used_;
  }

  void clear() {
    address_.set_zero();
    context_.set_zero();
    used_ = 0;
  }

  friend bool operator==(const MemoryState&, const MemoryState&) = default;

 private:
  Matrix address_;
  Matrix context_;
  std::size_t used_ = 0;
};

}  // namespace mann
