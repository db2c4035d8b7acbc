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

#include "unmask/synthetic.h"

#include <random>

#include "unmask/error.h"

namespace unmask {

namespace {

constexpr std::size_t kClasses = 5;
constexpr const char* kOnsets[kClasses] = {"b", "d", "g", "k", "m"};
constexpr const char* kNuclei[] = {"a", "e", "i", "o", "u", "ai", "ei", "oi", "au", "eu"};

}  // namespace

const std::vector<std::string>& synthetic_types() {
  static const std::vector<std::string> types{"PER", "LOC", "ORG", "MISC"};
  return types;
}

std::string synthetic_word(std::size_t cls, std::size_t w) {
  if (cls >= kClasses || w >= std::size(kNuclei)) {
    throw Error(ErrorCode::kIndexOutOfRange, "synthetic word index out of range");
  }
  return std::string(kOnsets[cls]) + kNuclei[w];
}

std::vector<TaggedSentence> make_next_word_task(std::size_t n_sentences, std::uint64_t seed,
                                                const SyntheticSpec& spec) {
  if (spec.min_words < 1 || spec.min_words > spec.max_words || spec.words_per_class < 1 ||
      spec.words_per_class > std::size(kNuclei)) {
    throw Error(ErrorCode::kInvalidConfig, "invalid synthetic task spec");
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> length(spec.min_words, spec.max_words);
  std::uniform_int_distribution<std::size_t> cls(0, kClasses - 1);
  std::uniform_int_distribution<std::size_t> word(0, spec.words_per_class - 1);
  std::vector<TaggedSentence> out;
  out.reserve(n_sentences);
  for (std::size_t s = 0; s < n_sentences; ++s) {
    const std::size_t n = length(rng);
    std::vector<std::size_t> classes(n);
    TaggedSentence sentence;
    for (std::size_t t = 0; t < n; ++t) {
      classes[t] = cls(rng);
      sentence.words.push_back(synthetic_word(classes[t], word(rng)));
    }
    for (std::size_t t = 0; t < n; ++t) {
      const bool typed_next = t + 1 < n && classes[t + 1] != 0;
      sentence.labels.push_back(typed_next ? "B-" + synthetic_types()[classes[t + 1] - 1] : "O");
    }
    out.push_back(std::move(sentence));
  }
  return out;
}

}  // namespace unmask
