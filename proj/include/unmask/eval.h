// Copyright 2026 The Unmask Lab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <compare>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "unmask/error.h"
#include "unmask/instruction.h"
#include "unmask/model.h"

namespace unmask {

// Word range [start, end], both inclusive.
struct Span {
  std::size_t start = 0;
  std::size_t end = 0;
  std::string type;

  auto operator<=>(const Span&) const = default;
  bool operator==(const Span&) const = default;
};

// Maximal B-X (I-X)* runs. Throws UnnormalizedInput on a dangling I-X.
std::vector<Span> extract_spans(const std::vector<std::string>& labels);

// Renders non-overlapping spans as IOB2 over n words.
std::vector<std::string> spans_to_labels(const std::vector<Span>& spans, std::size_t n);

struct TypeCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;

  bool operator==(const TypeCounts&) const = default;
};

struct EvalReport {
  double micro_p = 0.0;
  double micro_r = 0.0;
  double micro_f1 = 0.0;
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::map<std::string, TypeCounts> per_type;
  std::size_t n_sentences = 0;
  std::size_t n_fallback = 0;
};

// Strict span micro-F1. Both sides are IOB2-repaired before span extraction.
EvalReport micro_f1(const std::vector<std::vector<std::string>>& gold,
                    const std::vector<std::vector<std::string>>& pred);

nlohmann::json report_to_json(const EvalReport& report, bool per_type = false);

// Argmax label at each first-piece row; ties go to the lowest label id.
template <typename T>
std::vector<int> select_first_token_predictions(const Logits<T>& logits,
                                                std::span<const std::size_t> first_index) {
  std::vector<int> out;
  out.reserve(first_index.size());
  for (std::size_t r : first_index) {
    if (r >= logits.rows) {
      throw Error(ErrorCode::kIndexOutOfRange, "first index " + std::to_string(r) + " beyond " +
                                                   std::to_string(logits.rows) + " rows");
    }
    const T* row = logits.values.data() + r * logits.cols;
    std::size_t best = 0;
    for (std::size_t c = 1; c < logits.cols; ++c) {
      if (row[c] > row[best]) best = c;
    }
    out.push_back(static_cast<int>(best));
  }
  return out;
}

struct MappedResponse {
  std::vector<std::string> labels;
  std::size_t matched = 0;
  std::size_t skipped = 0;
  bool fallback = false;
};

// Greedy left-to-right placement of each item on the leftmost window of still
// unlabeled words equal to its whitespace-split surface. Items with unknown
// types or no window are skipped. When something was predicted (or malformed)
// but nothing was placed, the output is all O and fallback is set.
MappedResponse map_responses(const std::vector<ResponseItem>& parsed,
                             const std::vector<std::string>& words,
                             const std::vector<std::string>& valid_types,
                             std::size_t malformed = 0);

}  // namespace unmask
