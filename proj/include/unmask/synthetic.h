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
#include <cstdint>
#include <string>
#include <vector>

#include "unmask/data.h"

namespace unmask {

// Sentences over a small closed vocabulary whose words fall into one neutral
// class and four typed classes (PER, LOC, ORG, MISC). The tag of word t is
// B-<type of word t+1> when word t+1 is typed, and O otherwise (including the
// last word), so every label is a function of the next word only.
struct SyntheticSpec {
  std::size_t words_per_class = 6;
  std::size_t min_words = 5;
  std::size_t max_words = 12;
};

const std::vector<std::string>& synthetic_types();

// Word w of class c; class 0 is neutral.
std::string synthetic_word(std::size_t cls, std::size_t w);

std::vector<TaggedSentence> make_next_word_task(std::size_t n_sentences, std::uint64_t seed,
                                                const SyntheticSpec& spec = {});

}  // namespace unmask
