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

#include <cstddef>
#include <random>
#include <set>
#include <string>
#include <tuple>
#include <vector>

namespace unmask::testing {

// Brute-force strict span scorer, written independently of the eval module.
struct OracleCounts {
  std::size_t tp = 0, fp = 0, fn = 0;
  double f1() const { return tp > 0 ? 2.0 * tp / static_cast<double>(2 * tp + fp + fn) : 0.0; }
};

inline std::string oracle_type(const std::string& tag) { return tag.size() > 2 ? tag.substr(2) : ""; }

inline std::set<std::tuple<std::size_t, std::size_t, std::size_t, std::string>> oracle_spans(
    std::size_t sentence, std::vector<std::string> tags) {
  for (std::size_t i = 0; i < tags.size(); ++i) {
    if (tags[i][0] != 'I') continue;
    const std::string t = oracle_type(tags[i]);
    const bool ok = i > 0 && tags[i - 1] != "O" && oracle_type(tags[i - 1]) == t;
    if (!ok) tags[i] = "B-" + t;
  }
  std::set<std::tuple<std::size_t, std::size_t, std::size_t, std::string>> out;
  for (std::size_t i = 0; i < tags.size(); ++i) {
    if (tags[i][0] != 'B') continue;
    const std::string t = oracle_type(tags[i]);
    std::size_t j = i;
    while (j + 1 < tags.size() && tags[j + 1] == "I-" + t) ++j;
    out.insert({sentence, i, j, t});
  }
  return out;
}

inline OracleCounts oracle_score(const std::vector<std::vector<std::string>>& gold,
                                 const std::vector<std::vector<std::string>>& pred) {
  std::set<std::tuple<std::size_t, std::size_t, std::size_t, std::string>> g, p;
  for (std::size_t s = 0; s < gold.size(); ++s) {
    auto gs = oracle_spans(s, gold[s]);
    auto ps = oracle_spans(s, pred[s]);
    g.insert(gs.begin(), gs.end());
    p.insert(ps.begin(), ps.end());
  }
  OracleCounts c;
  for (const auto& span : p) c.tp += g.count(span);
  c.fp = p.size() - c.tp;
  c.fn = g.size() - c.tp;
  return c;
}

// Random tags over four types, at most 12 words, dangling I- tags included.
inline std::vector<std::string> random_tags(std::size_t n, std::mt19937_64& rng) {
  static const char* kTypes[] = {"PER", "LOC", "ORG", "MISC"};
  std::uniform_int_distribution<int> kind(0, 2), type(0, 3);
  std::vector<std::string> tags;
  for (std::size_t i = 0; i < n; ++i) {
    const int k = kind(rng);
    tags.push_back(k == 0 ? std::string("O") : std::string(k == 1 ? "B-" : "I-") + kTypes[type(rng)]);
  }
  return tags;
}

}  // namespace unmask::testing
