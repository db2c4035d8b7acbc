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

#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "unmask/error.h"
#include "unmask/model.h"

#define EXPECT_ERROR_CODE(stmt, expected_code)                                   \
  do {                                                                           \
    try {                                                                        \
      stmt;                                                                      \
      ADD_FAILURE() << "expected " << ::unmask::error_code_name(expected_code);  \
    } catch (const ::unmask::Error& e) {                                         \
      EXPECT_EQ(e.code(), expected_code) << e.what();                            \
    }                                                                            \
  } while (0)

namespace unmask::testing {

inline ModelSpec tiny_spec(std::size_t blocks = 4, std::size_t vocab = 11, std::size_t labels = 5) {
  ModelSpec s;
  s.n_blocks = blocks;
  s.d_model = 8;
  s.n_heads = 2;
  s.d_ff = 12;
  s.vocab_size = vocab;
  s.max_len = 12;
  s.dropout = 0.0;
  s.n_labels = labels;
  s.lm_head = true;
  return s;
}

inline TokenBatch random_tokens(std::size_t batch, std::size_t length, std::size_t vocab,
                                std::mt19937_64& rng, bool ragged = true) {
  TokenBatch tb;
  tb.batch = batch;
  tb.length = length;
  std::uniform_int_distribution<int> tok(0, static_cast<int>(vocab) - 1);
  std::uniform_int_distribution<std::size_t> len(2, length);
  for (std::size_t i = 0; i < batch * length; ++i) tb.ids.push_back(tok(rng));
  for (std::size_t b = 0; b < batch; ++b) tb.valid_lens.push_back(ragged ? len(rng) : length);
  return tb;
}

// Maximum of |a - n| / max(|a|, |n|, floor) over every trainable entry, where n
// is the central difference (f(x+h) - f(x-h)) / 2h.
template <typename Loss>
double max_relative_fd_error(Model<double>& model, const Gradients<double>& analytic, Loss loss,
                             double h = 1e-5, double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < model.params().size(); ++i) {
    auto& p = model.params()[i];
    if (!p.trainable) continue;
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double saved = p.value[j];
      p.value[j] = saved + h;
      const double up = loss();
      p.value[j] = saved - h;
      const double down = loss();
      p.value[j] = saved;
      const double numeric = (up - down) / (2 * h);
      const double a = analytic[i][j];
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

// Targets for each objective: next token, every third position, every other position.
inline LossBatch with_targets(TokenBatch tb, Objective obj, std::size_t classes, std::mt19937_64& rng) {
  LossBatch lb;
  std::uniform_int_distribution<int> label(0, static_cast<int>(classes) - 1);
  for (std::size_t b = 0; b < tb.batch; ++b) {
    for (std::size_t t = 0; t < tb.valid_lens[b]; ++t) {
      if (obj == Objective::kClm) {
        if (t + 1 < tb.valid_lens[b]) lb.targets.push_back({b, t, tb.at(b, t + 1)});
      } else if (obj == Objective::kMlm) {
        if (t % 3 == 1) lb.targets.push_back({b, t, label(rng)});
      } else if (t % 2 == 0) {
        lb.targets.push_back({b, t, label(rng)});
      }
    }
  }
  lb.tokens = std::move(tb);
  return lb;
}

}  // namespace unmask::testing
