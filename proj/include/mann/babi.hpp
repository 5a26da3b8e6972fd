// Copyright 2026 The mannflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <istream>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mann/dataset.hpp"
#include "mann/error.hpp"

namespace mann {

/// Word vocabulary plus the separate answer-label space.
class Vocabulary {
 public:
  std::uint32_t add_word(const std::string& token) { return intern(token, words_, word_index_); }
  std::uint32_t add_label(const std::string& token) { return intern(token, labels_, label_index_); }

  std::size_t size() const noexcept { return words_.size(); }
  std::size_t num_labels() const noexcept { return labels_.size(); }
  bool empty() const noexcept { return words_.empty() && labels_.empty(); }

  const std::vector<std::string>& words() const noexcept { return words_; }
  const std::vector<std::string>& labels() const noexcept { return labels_; }

  std::uint32_t word(const std::string& token) const {
    auto it = word_index_.find(token);
    require(it != word_index_.end(), ErrorCode::kEncoding, "unknown token '" + token + "'");
    return it->second;
  }

  std::uint32_t label(const std::string& token) const {
    auto it = label_index_.find(token);
    require(it != label_index_.end(), ErrorCode::kEncoding, "unknown answer '" + token + "'");
    return it->second;
  }

  const std::string& word_at(std::uint32_t idx) const {
    require(idx < words_.size(), ErrorCode::kEncoding, "word index " + std::to_string(idx) + " out of range");
    return words_[idx];
  }

  const std::string& label_at(std::size_t idx) const {
    require(idx < labels_.size(), ErrorCode::kEncoding, "label " + std::to_string(idx) + " out of range");
    return labels_[idx];
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.words_ == b.words_ && a.labels_ == b.labels_;
  }

 private:
  static std::uint32_t intern(const std::string& token, std::vector<std::string>& list,
                              std::unordered_map<std::string, std::uint32_t>& index) {
    auto [it, inserted] = index.try_emplace(token, static_cast<std::uint32_t>(list.size()));
    if (inserted) list.push_back(token);
    return it->second;
  }

  std::vector<std::string> words_;
  std::vector<std::string> labels_;
  std::unordered_map<std::string, std::uint32_t> word_index_;
  std::unordered_map<std::string, std::uint32_t> label_index_;
};

/// Lowercases, splits on whitespace and drops trailing '.' / '?'.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto finish = [&] {
    while (!cur.empty() && (cur.back() == '.' || cur.back() == '?')) cur.pop_back();
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      finish();
    } else {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
  }
  finish();
  return out;
}

using Tokens = std::vector<std::string>;

struct TextSample {
  std::vector<Tokens> story;
  Tokens question;
  std::string answer;
  std::vector<std::uint32_t> supporting_facts;
};

struct ParsedText {
  std::vector<TextSample> samples;
  std::size_t skipped_multiword = 0;
};

inline ParsedText parse_babi_text(std::istream& in) {
  ParsedText out;
  std::vector<Tokens> block;
  std::string line;
  std::size_t line_no = 0;
  auto parse_error = [&](const std::string& why) {
    fail(ErrorCode::kParse, "line " + std::to_string(line_no) + ": " + why);
  };

  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) continue;

    std::size_t pos = 0;
    while (pos < line.size() && line[pos] == ' ') ++pos;
    std::uint32_t id = 0;
    const auto [next, ec] = std::from_chars(line.data() + pos, line.data() + line.size(), id);
    if (ec != std::errc() || next == line.data() + pos) parse_error("missing line id");
    pos = static_cast<std::size_t>(next - line.data());
    if (pos >= line.size() || line[pos] != ' ') parse_error("expected a space after the line id");
    if (id == 0) parse_error("line ids start at 1");
    if (id == 1) block.clear();

    std::vector<std::string_view> fields;
    std::string_view rest(line);
    rest.remove_prefix(pos + 1);
    for (std::size_t tab; (tab = rest.find('\t')) != std::string_view::npos;) {
      fields.push_back(rest.substr(0, tab));
      rest.remove_prefix(tab + 1);
    }
    fields.push_back(rest);

    if (fields.size() == 1) {
      Tokens t = tokenize(fields[0]);
      if (t.empty()) parse_error("empty statement");
      block.push_back(std::move(t));
      continue;
    }
    if (fields.size() > 3) parse_error("question lines have at most three tab-separated fields");

    TextSample s;
    s.question = tokenize(fields[0]);
    if (s.question.empty()) parse_error("empty question");
    const Tokens answer = tokenize(fields[1]);
    if (answer.empty()) parse_error("missing answer");
    if (fields.size() == 3) {
      std::istringstream ids{std::string(fields[2])};
      std::string tok;
      while (ids >> tok) {
        std::uint32_t v = 0;
        const auto [p, e] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
        if (e != std::errc() || p != tok.data() + tok.size()) parse_error("bad supporting fact id '" + tok + "'");
        s.supporting_facts.push_back(v);
      }
    }
    if (answer.size() != 1 || answer[0].find(',') != std::string::npos) {
      ++out.skipped_multiword;
      continue;
    }
    if (block.empty()) parse_error("question without any preceding statement");
    s.answer = answer[0];
    s.story = block;
    out.samples.push_back(std::move(s));
  }
  return out;
}

inline Sentence encode_tokens(const Tokens& tokens, const Vocabulary& vocab) {
  require(!tokens.empty(), ErrorCode::kEncoding, "cannot encode an empty sentence");
  std::vector<std::uint32_t> idx;
  idx.reserve(tokens.size());
  for (const auto& t : tokens) idx.push_back(vocab.word(t));
  return Sentence(std::move(idx));
}

inline Tokens decode(const Sentence& s, const Vocabulary& vocab) {
  Tokens out;
  for (auto idx : s.words()) out.push_back(vocab.word_at(idx));
  return out;
}

inline QASample encode_sample(const TextSample& sample, const Vocabulary& vocab) {
  QASample out;
  for (const auto& t : sample.story) out.story.push_back(encode_tokens(t, vocab));
  out.question = encode_tokens(sample.question, vocab);
  out.answer = vocab.label(sample.answer);
  out.supporting_facts = sample.supporting_facts;
  return out;
}

struct ParsedDataset {
  Dataset samples;
  Vocabulary vocab;
  std::size_t skipped_multiword = 0;
};

/// Parses bAbI text. Word indices and labels are assigned in order of first
/// appearance across the whole stream.
inline ParsedDataset parse_babi(std::istream& in) {
  ParsedText text = parse_babi_text(in);
  ParsedDataset out;
  out.skipped_multiword = text.skipped_multiword;
  for (const auto& s : text.samples) {
    for (const auto& sentence : s.story) {
      for (const auto& t : sentence) out.vocab.add_word(t);
    }
    for (const auto& t : s.question) out.vocab.add_word(t);
    out.vocab.add_label(s.answer);
  }
  out.samples.reserve(text.samples.size());
  for (const auto& s : text.samples) out.samples.push_back(encode_sample(s, out.vocab));
  return out;
}

inline ParsedDataset parse_babi(std::string_view text) {
  std::istringstream in{std::string(text)};
  return parse_babi(in);
}

}  // namespace mann
