// Copyright 2026 The mannflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "mann/model.hpp"

namespace mann {

struct QASample {
  Story story;
  Sentence question;
  std::size_t answer = 0;
  std::vector<std::uint32_t> supporting_facts;

  friend bool operator==(const QASample&, const QASample&) = default;
};

using Dataset = std::vector<QASample>;

inline std::uint64_t total_word_occurrences(const QASample& s) {
  std::uint64_t n = s.question.size();
  for (const auto& sentence : s.story) n += sentence.size();
  return n;
}

}  // namespace mann
