// Copyright 2026 The mannflow Authors
// SPDX-License-Identifier: Apache-2.0

// Dataset cache layout (little-endian):
//   "MNDS" | u32 version | u32 vocab_size | u32 num_labels | u32 n_samples
//   per sample: u32 n_sentences, per sentence (u32 n_words, u32 words...),
//               question (u32 n_words, u32 words...), u32 answer,
//               u32 n_supporting, u32 ids...
//   u32 n_word_tokens, strings | u32 n_label_tokens, strings
// Strings are u32 length + bytes. The token sections may be empty.

#pragma once

#include <string>
#include <string_view>

#include "mann/babi.hpp"
#include "mann/binary_io.hpp"
#include "mann/dataset.hpp"

namespace mann {

inline constexpr std::string_view kDatasetMagic = "MNDS";
inline constexpr std::uint32_t kDatasetFormatVersion = 1;

struct DatasetBundle {
  Dataset samples;
  Vocabulary vocab;
  std::size_t vocab_size = 0;  // V the indices refer to
  std::size_t num_labels = 0;  // I the answers refer to

  friend bool operator==(const DatasetBundle&, const DatasetBundle&) = default;
};

inline std::string serialize_dataset(const DatasetBundle& b) {
  io::ByteWriter w;
  w.bytes(kDatasetMagic);
  w.u32(kDatasetFormatVersion);
  w.u32(static_cast<std::uint32_t>(b.vocab_size));
  w.u32(static_cast<std::uint32_t>(b.num_labels));
  w.u32(static_cast<std::uint32_t>(b.samples.size()));
  auto put_sentence = [&](const Sentence& s) {
    w.u32(static_cast<std::uint32_t>(s.size()));
    for (auto idx : s.words()) w.u32(idx);
  };
  for (const auto& s : b.samples) {
    w.u32(static_cast<std::uint32_t>(s.story.size()));
    for (const auto& sentence : s.story) put_sentence(sentence);
    put_sentence(s.question);
    w.u32(static_cast<std::uint32_t>(s.answer));
    w.u32(static_cast<std::uint32_t>(s.supporting_facts.size()));
    for (auto id : s.supporting_facts) w.u32(id);
  }
  w.u32(static_cast<std::uint32_t>(b.vocab.words().size()));
  for (const auto& t : b.vocab.words()) w.str(t);
  w.u32(static_cast<std::uint32_t>(b.vocab.labels().size()));
  for (const auto& t : b.vocab.labels()) w.str(t);
  return w.take();
}

inline DatasetBundle deserialize_dataset(std::string_view bytes) {
  io::ByteReader r(bytes, "dataset file");
  require(bytes.size() >= 4 && r.bytes(4) == kDatasetMagic, ErrorCode::kFormat, "dataset file has bad magic");
  const auto version = r.u32();
  require(version == kDatasetFormatVersion, ErrorCode::kFormat,
          "unsupported dataset format version " + std::to_string(version));
  DatasetBundle b;
  b.vocab_size = r.u32();
  b.num_labels = r.u32();
  const auto n = r.u32();

  auto get_sentence = [&] {
    const auto len = r.u32();
    require(len >= 1, ErrorCode::kFormat, "empty sentence in dataset file");
    require(len <= r.remaining() / 4, ErrorCode::kFormat, "sentence length exceeds file size");
    std::vector<std::uint32_t> words(len);
    for (auto& x : words) {
      x = r.u32();
      require(x < b.vocab_size, ErrorCode::kFormat, "word index out of range in dataset file");
    }
    return Sentence(std::move(words));
  };

  for (std::uint32_t i = 0; i < n; ++i) {
    QASample s;
    const auto n_sent = r.u32();
    require(n_sent >= 1 && n_sent <= r.remaining() / 8, ErrorCode::kFormat, "bad story length in dataset file");
    for (std::uint32_t k = 0; k < n_sent; ++k) s.story.push_back(get_sentence());
    s.question = get_sentence();
    s.answer = r.u32();
    require(s.answer < b.num_labels, ErrorCode::kFormat, "answer label out of range in dataset file");
    const auto n_sup = r.u32();
    require(n_sup <= r.remaining() / 4, ErrorCode::kFormat, "bad supporting fact count");
    for (std::uint32_t k = 0; k < n_sup; ++k) s.supporting_facts.push_back(r.u32());
    b.samples.push_back(std::move(s));
  }
  const auto n_words = r.u32();
  for (std::uint32_t k = 0; k < n_words; ++k) b.vocab.add_word(r.str());
  const auto n_labels = r.u32();
  for (std::uint32_t k = 0; k < n_labels; ++k) b.vocab.add_label(r.str());
  require(r.remaining() == 0, ErrorCode::kFormat, "trailing bytes after dataset");
  require(b.vocab.words().empty() || b.vocab.size() == b.vocab_size, ErrorCode::kFormat,
          "word token section disagrees with vocab size");
  return b;
}

inline void save_dataset(const DatasetBundle& b, const std::string& path) {
  io::write_file(path, serialize_dataset(b));
}

inline DatasetBundle load_dataset(const std::string& path) { return deserialize_dataset(io::read_file(path)); }

}  // namespace mann
