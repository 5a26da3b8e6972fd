// Copyright 2026 The mannflow Authors
// SPDX-License-Identifier: Apache-2.0

// Model file layout (little-endian):
//   "MANN" | u32 version | u32 V, E, I, L, T | u8 shared_embeddings
//   f64 row-major W_emb_a, [W_emb_c unless shared], W_emb_q, W_r, W_o

#pragma once

#include <string>
#include <string_view>

#include "mann/binary_io.hpp"
#include "mann/model.hpp"

namespace mann {

inline constexpr std::string_view kModelMagic = "MANN";
inline constexpr std::uint32_t kModelFormatVersion = 1;

namespace detail {

inline void put_matrix(io::ByteWriter& w, const Matrix& m) {
  for (double v : m.data()) w.f64(v);
}

inline Matrix get_matrix(io::ByteReader& r, std::size_t rows, std::size_t cols) {
  Matrix m(rows, cols);
  for (double& v : m.data()) v = r.f64();
  return m;
}

inline std::size_t expected_model_bytes(const Dimensions& d, bool shared) {
  const std::size_t ev = d.embed_dim * d.vocab_size;
  const std::size_t n = ev * (shared ? 2 : 3) + d.embed_dim * d.embed_dim + d.output_dim * d.embed_dim;
  return 4 + 4 + 5 * 4 + 1 + 8 * n;
}

}  // namespace detail

inline std::string serialize_model(const ModelWeights& m) {
  m.validate();
  io::ByteWriter w;
  w.bytes(kModelMagic);
  w.u32(kModelFormatVersion);
  for (std::size_t v : {m.dims.vocab_size, m.dims.embed_dim, m.dims.output_dim, m.dims.memory_slots, m.dims.hops}) {
    w.u32(static_cast<std::uint32_t>(v));
  }
  w.u8(m.shared_embeddings ? 1 : 0);
  detail::put_matrix(w, m.emb_address);
  if (!m.shared_embeddings) detail::put_matrix(w, m.emb_context);
  detail::put_matrix(w, m.emb_question);
  detail::put_matrix(w, m.controller);
  detail::put_matrix(w, m.output);
  return w.take();
}

inline ModelWeights deserialize_model(std::string_view bytes) {
  io::ByteReader r(bytes, "model file");
  require(bytes.size() >= 4 && r.bytes(4) == kModelMagic, ErrorCode::kFormat, "model file has bad magic");
  const auto version = r.u32();
  require(version == kModelFormatVersion, ErrorCode::kFormat,
          "unsupported model format version " + std::to_string(version));
  Dimensions d;
  d.vocab_size = r.u32();
  d.embed_dim = r.u32();
  d.output_dim = r.u32();
  d.memory_slots = r.u32();
  d.hops = r.u32();
  const std::uint8_t shared = r.u8();
  require(shared <= 1, ErrorCode::kFormat, "shared_embeddings flag must be 0 or 1");
  try {
    d.validate();
  } catch (const Error& e) {
    fail(ErrorCode::kFormat, std::string("model header: ") + e.what());
  }
  const auto expected = detail::expected_model_bytes(d, shared == 1);
  require(bytes.size() == expected, ErrorCode::kFormat,
          "model file is " + std::to_string(bytes.size()) + " bytes, header implies " + std::to_string(expected));

  ModelWeights m;
  m.dims = d;
  m.shared_embeddings = shared == 1;
  m.emb_address = detail::get_matrix(r, d.embed_dim, d.vocab_size);
  if (!m.shared_embeddings) m.emb_context = detail::get_matrix(r, d.embed_dim, d.vocab_size);
  m.emb_question = detail::get_matrix(r, d.embed_dim, d.vocab_size);
  m.controller = detail::get_matrix(r, d.embed_dim, d.embed_dim);
  m.output = detail::get_matrix(r, d.output_dim, d.embed_dim);
  try {
    m.validate();
  } catch (const Error& e) {
    fail(ErrorCode::kFormat, std::string("model payload: ") + e.what());
  }
  return m;
}

inline void save_model(const ModelWeights& m, const std::string& path) { io::write_file(path, serialize_model(m)); }

inline ModelWeights load_model(const std::string& path) { return deserialize_model(io::read_file(path)); }

}  // namespace mann
