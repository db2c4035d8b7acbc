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
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace unmask {

enum class MaskKind { kCausal, kFull };

std::string_view mask_kind_name(MaskKind kind);

// Value used in place of -inf in additive masks. Finite so that the softmax
// max-subtraction never computes (-inf) - (-inf).
template <typename T>
constexpr T masked_value() {
  return std::numeric_limits<T>::lowest();
}

// Layer-group unmasking configuration. Digit j of the code (left to right)
// governs blocks [j*b, j*b + b), counting from the embedding side; '1' removes
// the causal mask in those blocks.
class UnmaskConfig {
 public:
  static UnmaskConfig parse(std::string_view code, std::size_t n_blocks);
  static UnmaskConfig all_masked(std::size_t groups, std::size_t n_blocks);
  static UnmaskConfig all_unmasked(std::size_t groups, std::size_t n_blocks);

  const std::string& code() const { return code_; }
  std::size_t group_count() const { return code_.size(); }
  std::size_t blocks_per_group() const { return blocks_per_group_; }
  std::size_t block_count() const { return code_.size() * blocks_per_group_; }

  MaskKind block_kind(std::size_t block_index) const;

  // Index of the first block whose kind is Full, if any.
  std::optional<std::size_t> first_unmasked_block() const;

  bool operator==(const UnmaskConfig&) const = default;

 private:
  UnmaskConfig(std::string code, std::size_t blocks_per_group)
      : code_(std::move(code)), blocks_per_group_(blocks_per_group) {}

  std::string code_;
  std::size_t blocks_per_group_;
};

inline MaskKind block_mask_kind(const UnmaskConfig& cfg, std::size_t block_index) {
  return cfg.block_kind(block_index);
}

// Row-major [length, length] additive bias for one sequence. Columns at or past
// valid_len are masked for both kinds; rows past valid_len stay causal-shaped.
template <typename T>
std::vector<T> build_mask(MaskKind kind, std::size_t length, std::size_t valid_len);

// Additive masks for a whole batch, laid out [batch, 1, length, length].
template <typename T>
struct AttentionMask {
  std::size_t batch = 0;
  std::size_t length = 0;
  MaskKind kind = MaskKind::kCausal;
  std::vector<std::size_t> valid_lens;
  std::vector<T> values;

  std::span<const T> sequence(std::size_t b) const {
    return std::span<const T>(values).subspan(b * length * length, length * length);
  }
};

template <typename T>
AttentionMask<T> build_batch_mask(MaskKind kind, std::size_t length,
                                  std::span<const std::size_t> valid_lens);

// Reflected binary Gray sequence over m-digit codes, starting at all zeros.
std::vector<std::string> gray_code_order(std::size_t m);

// Position of a code within gray_code_order(code.size()).
std::size_t gray_rank(std::string_view code);

}  // namespace unmask
