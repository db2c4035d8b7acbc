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

#include "unmask/eval.h"

#include <algorithm>
#include <sstream>

#include "unmask/iob.h"

namespace unmask {

std::vector<Span> extract_spans(const std::vector<std::string>& labels) {
  std::vector<Span> spans;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const TagParts p = split_tag(labels[i]);
    if (p.prefix == 'O') continue;
    if (p.prefix == 'I') {
      const bool continues = !spans.empty() && spans.back().end + 1 == i && spans.back().type == p.type;
      if (!continues) {
        throw Error(ErrorCode::kUnnormalizedInput,
                    "dangling " + labels[i] + " at position " + std::to_string(i));
      }
      spans.back().end = i;
    } else {
      spans.push_back({i, i, p.type});
    }
  }
  return spans;
}

std::vector<std::string> spans_to_labels(const std::vector<Span>& spans, std::size_t n) {
  std::vector<std::string> labels(n, "O");
  for (const auto& s : spans) {
    if (s.start > s.end || s.end >= n) {
      throw Error(ErrorCode::kIndexOutOfRange, "span beyond sentence");
    }
    for (std::size_t i = s.start; i <= s.end; ++i) {
      if (labels[i] != "O") throw Error(ErrorCode::kOverlappingSpans, "spans overlap");
      labels[i] = (i == s.start ? "B-" : "I-") + s.type;
    }
  }
  return labels;
}

EvalReport micro_f1(const std::vector<std::vector<std::string>>& gold,
                    const std::vector<std::vector<std::string>>& pred) {
  if (gold.size() != pred.size()) {
    throw Error(ErrorCode::kLengthMismatch, std::to_string(gold.size()) + " gold sentences vs " +
                                                std::to_string(pred.size()) + " predicted");
  }
  EvalReport r;
  r.n_sentences = gold.size();
  for (std::size_t s = 0; s < gold.size(); ++s) {
    if (gold[s].size() != pred[s].size()) {
      throw Error(ErrorCode::kLengthMismatch, "sentence " + std::to_string(s) + ": " +
                                                  std::to_string(gold[s].size()) + " gold tags vs " +
                                                  std::to_string(pred[s].size()) + " predicted");
    }
    auto g_labels = gold[s];
    auto p_labels = pred[s];
    repair_iob2(g_labels);
    repair_iob2(p_labels);
    auto g = extract_spans(g_labels);
    auto p = extract_spans(p_labels);
    // Both lists come out sorted by start and spans within one list never share a start.
    std::size_t i = 0, j = 0;
    while (i < g.size() || j < p.size()) {
      if (j == p.size() || (i < g.size() && g[i] < p[j])) {
        ++r.per_type[g[i++].type].fn;
      } else if (i == g.size() || p[j] < g[i]) {
        ++r.per_type[p[j++].type].fp;
      } else {
        ++r.per_type[g[i].type].tp;
        ++i;
        ++j;
      }
    }
  }
  for (const auto& [type, c] : r.per_type) {
    r.tp += c.tp;
    r.fp += c.fp;
    r.fn += c.fn;
  }
  const double tp = static_cast<double>(r.tp);
  r.micro_p = r.tp + r.fp > 0 ? tp / static_cast<double>(r.tp + r.fp) : 0.0;
  r.micro_r = r.tp + r.fn > 0 ? tp / static_cast<double>(r.tp + r.fn) : 0.0;
  // 2pr/(p+r) in count form.
  r.micro_f1 = r.tp > 0 ? 2 * tp / static_cast<double>(2 * r.tp + r.fp + r.fn) : 0.0;
  return r;
}

nlohmann::json report_to_json(const EvalReport& report, bool per_type) {
  nlohmann::json j = {{"micro_p", report.micro_p}, {"micro_r", report.micro_r},
                      {"micro_f1", report.micro_f1}, {"tp", report.tp},
                      {"fp", report.fp}, {"fn", report.fn},
                      {"n_sentences", report.n_sentences}, {"n_fallback", report.n_fallback}};
  if (per_type) {
    nlohmann::json table = nlohmann::json::object();
    for (const auto& [type, c] : report.per_type) {
      table[type] = {{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}};
    }
    j["per_type"] = std::move(table);
  }
  return j;
}

MappedResponse map_responses(const std::vector<ResponseItem>& parsed,
                             const std::vector<std::string>& words,
                             const std::vector<std::string>& valid_types, std::size_t malformed) {
  MappedResponse out;
  out.labels.assign(words.size(), "O");
  std::vector<bool> used(words.size(), false);
  for (const auto& item : parsed) {
    std::vector<std::string> surface;
    std::istringstream ss(item.surface);
    for (std::string w; ss >> w;) surface.push_back(std::move(w));
    const bool known =
        std::find(valid_types.begin(), valid_types.end(), item.type) != valid_types.end();
    if (!known || surface.empty() || surface.size() > words.size()) {
      ++out.skipped;
      continue;
    }
    bool placed = false;
    for (std::size_t s = 0; s + surface.size() <= words.size() && !placed; ++s) {
      bool fits = true;
      for (std::size_t k = 0; k < surface.size() && fits; ++k) {
        fits = !used[s + k] && words[s + k] == surface[k];
      }
      if (!fits) continue;
      for (std::size_t k = 0; k < surface.size(); ++k) {
        used[s + k] = true;
        out.labels[s + k] = (k == 0 ? "B-" : "I-") + item.type;
      }
      placed = true;
    }
    if (placed) {
      ++out.matched;
    } else {
      ++out.skipped;
    }
  }
  if (out.matched == 0 && (!parsed.empty() || malformed > 0)) {
    out.labels.assign(words.size(), "O");
    out.fallback = true;
  }
  return out;
}

}  // namespace unmask
