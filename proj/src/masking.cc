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

#include "unmask/masking.h"

#include <string>

#include "unmask/error.h"

namespace unmask {

std::string_view mask_kind_name(MaskKind kind) {
  return kind == MaskKind::kCausal ? "causal" : "full";
}

UnmaskConfig UnmaskConfig::parse(std::string_view code, std::size_t n_blocks) {
  if (code.empty()) {
    throw Error(ErrorCode::kNonBinaryCode, "empty unmask code");
  }
  for (char c : code) {
    if (c != '0' && c != '1') {
      throw Error(ErrorCode::kNonBinaryCode,
                  "unmask code '" + std::string(code) + "' must contain only 0/1");
    }
  }
  if (n_blocks == 0 || n_blocks % code.size() != 0) {
    throw Error(ErrorCode::kIndivisibleBlockCount,
                std::to_string(n_blocks) + " blocks cannot be split into " +
                    std::to_string(code.size()) + " equal groups");
  }
  return UnmaskConfig(std::string(code), n_blocks / code.size());
}

UnmaskConfig UnmaskConfig::all_masked(std::size_t groups, std::size_t n_blocks) {
  return parse(std::string(groups, '0'), n_blocks);
}

UnmaskConfig UnmaskConfig::all_unmasked(std::size_t groups, std::size_t n_blocks) {
  return parse(std::string(groups, '1'), n_blocks);
}

MaskKind UnmaskConfig::block_kind(std::size_t block_index) const {
  if (block_index >= block_count()) {
    throw Error(ErrorCode::kIndexOutOfRange,
                "block " + std::to_string(block_index) + " of " +
                    std::to_string(block_count()));
  }
  return code_[block_index / blocks_per_group_] == '1' ? MaskKind::kFull
                                                       : MaskKind::kCausal;
}

std::optional<std::size_t> UnmaskConfig::first_unmasked_block() const {
  auto pos = code_.find('1');
  if (pos == std::string::npos) return std::nullopt;
  return pos * blocks_per_group_;
}

template <typename T>
std::vector<T> build_mask(MaskKind kind, std::size_t length, std::size_t valid_len) {
  if (valid_len < 1 || valid_len > length) {
    throw Error(ErrorCode::kInvalidLength,
                "valid_len " + std::to_string(valid_len) + " outside [1, " +
                    std::to_string(length) + "]");
  }
  std::vector<T> mask(length * length, T(0));
  for (std::size_t i = 0; i < length; ++i) {
    const bool causal_row = kind == MaskKind::kCausal || i >= valid_len;
    for (std::size_t j = 0; j < length; ++j) {
      if (j >= valid_len || (causal_row && j > i)) {
        mask[i * length + j] = masked_value<T>();
      }
    }
  }
  return mask;
}

template <typename T>
AttentionMask<T> build_batch_mask(MaskKind kind, std::size_t length,
                                  std::span<const std::size_t> valid_lens) {
  AttentionMask<T> out;
  out.batch = valid_lens.size();
  out.length = length;
  out.kind = kind;
  out.valid_lens.assign(valid_lens.begin(), valid_lens.end());
  out.values.reserve(out.batch * length * length);
  for (std::size_t len : valid_lens) {
    auto m = build_mask<T>(kind, length, len);
    out.values.insert(out.values.end(), m.begin(), m.end());
  }
  return out;
}

template std::vector<float> build_mask<float>(MaskKind, std::size_t, std::size_t);
template std::vector<double> build_mask<double>(MaskKind, std::size_t, std::size_t);
template AttentionMask<float> build_batch_mask<float>(MaskKind, std::size_t,
                                                      std::span<const std::size_t>);
template AttentionMask<double> build_batch_mask<double>(MaskKind, std::size_t,
                                                        std::span<const std::size_t>);

std::vector<std::string> gray_code_order(std::size_t m) {
  if (m == 0 || m > 20) {
    throw Error(ErrorCode::kInvalidLength, "gray code width must be in [1, 20]");
  }
  const std::size_t count = std::size_t{1} << m;
  std::vector<std::string> codes;
  codes.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t g = i ^ (i >> 1);
    std::string code(m, '0');
    for (std::size_t bit = 0; bit < m; ++bit) {
      if (g & (std::size_t{1} << (m - 1 - bit))) code[bit] = '1';
    }
    codes.push_back(std::move(code));
  }
  return codes;
}

std::size_t gray_rank(std::string_view code) {
  std::size_t g = 0;
  for (char c : code) {
    if (c != '0' && c != '1') {
      throw Error(ErrorCode::kNonBinaryCode, std::string(code));
    }
    g = (g << 1) | static_cast<std::size_t>(c == '1');
  }
  // Inverse of i ^ (i >> 1).
  std::size_t i = g;
  for (std::size_t shift = g >> 1; shift != 0; shift >>= 1) i ^= shift;
  return i;
}

}  // namespace unmask
