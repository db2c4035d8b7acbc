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
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "unmask/masking.h"
#include "unmask/params.h"

namespace unmask {

enum class Objective { kClm, kMlm, kSl };

std::string_view objective_name(Objective objective);
Objective parse_objective(std::string_view name);

// Every block is pre-norm (LayerNorm -> attention / LayerNorm -> GELU MLP, each
// wrapped in a residual) on top of learned absolute position embeddings.
inline constexpr std::string_view kBlockFlavor = "pre_norm_gelu_learned_positions";

struct ModelSpec {
  std::size_t n_blocks = 4;
  std::size_t d_model = 128;
  std::size_t n_heads = 4;
  std::size_t d_ff = 512;
  std::size_t vocab_size = 2000;
  std::size_t max_len = 128;
  double dropout = 0.1;
  // Width of the sequence-labeling head; 0 when absent.
  std::size_t n_labels = 0;
  // Untied projection to the vocabulary, shared by the CLM and MLM objectives.
  bool lm_head = true;
  double norm_eps = 1e-5;

  std::size_t d_head() const { return d_model / n_heads; }
  void validate() const;
  bool operator==(const ModelSpec&) const = default;
};

struct LoraSpec {
  std::size_t rank = 64;
  double alpha = 16.0;
  double dropout = 0.1;
  std::vector<std::string> targets{"query", "value"};

  double scale() const { return alpha / static_cast<double>(rank); }
  bool operator==(const LoraSpec&) const = default;
};

template <typename T>
class Model {
 public:
  Model() = default;
  Model(ModelSpec spec, ParamSet<T> params, std::optional<LoraSpec> lora = std::nullopt);

  // normal(0, 0.02) weights and embeddings, zero biases, unit norm gains.
  static Model initialize(const ModelSpec& spec, std::uint64_t seed);

  const ModelSpec& spec() const { return spec_; }
  ModelSpec& mutable_spec() { return spec_; }
  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }
  const std::optional<LoraSpec>& lora() const { return lora_; }
  void set_lora(std::optional<LoraSpec> lora) { lora_ = std::move(lora); }

  template <typename U>
  Model<U> cast() const {
    return Model<U>(spec_, params_.template cast<U>(), lora_);
  }

 private:
  ModelSpec spec_;
  ParamSet<T> params_;
  std::optional<LoraSpec> lora_;
};

// Parameter names in manifest order for a spec (plus LoRA factors if given).
std::vector<std::string> parameter_names(const ModelSpec& spec,
                                         const std::optional<LoraSpec>& lora);
std::vector<std::size_t> parameter_shape(const ModelSpec& spec, const std::optional<LoraSpec>& lora,
                                         std::string_view name);
std::string block_param(std::size_t block, std::string_view leaf);

// Token ids padded to a common length.
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t length = 0;
  std::vector<int> ids;
  std::vector<std::size_t> valid_lens;

  int at(std::size_t b, std::size_t t) const { return ids[b * length + t]; }
};

// One supervised position: sequence `row`, token `position`, class `label`.
struct Target {
  std::size_t row = 0;
  std::size_t position = 0;
  int label = 0;
};

struct LossBatch {
  TokenBatch tokens;
  std::vector<Target> targets;
};

template <typename T>
struct Hidden {
  std::size_t batch = 0;
  std::size_t length = 0;
  std::size_t width = 0;
  // Final-norm output, [batch * length, width] row-major.
  std::vector<T> values;
  // Residual stream entering each block, same layout; filled on request.
  std::vector<std::vector<T>> block_inputs;

  std::span<const T> row(std::size_t b, std::size_t t) const {
    return std::span<const T>(values).subspan((b * length + t) * width, width);
  }
};

template <typename T>
struct Logits {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> values;

  std::span<const T> row(std::size_t r) const {
    return std::span<const T>(values).subspan(r * cols, cols);
  }
};

// Dropout is active iff dropout_rng is non-null.
template <typename T>
Hidden<T> forward(const Model<T>& model, const TokenBatch& batch, const UnmaskConfig& cfg,
                  std::mt19937_64* dropout_rng = nullptr, bool keep_block_inputs = false);

template <typename T>
Logits<T> clm_logits(const Model<T>& model, const Hidden<T>& hidden);
template <typename T>
Logits<T> mlm_logits(const Model<T>& model, const Hidden<T>& hidden);
template <typename T>
Logits<T> sl_logits(const Model<T>& model, const Hidden<T>& hidden);

template <typename T>
struct LossAndGrads {
  T loss = T(0);
  std::size_t count = 0;
  Gradients<T> grads;
};

// Mean cross-entropy over the batch targets and its exact gradient.
template <typename T>
LossAndGrads<T> loss_and_grads(const Model<T>& model, const LossBatch& batch,
                               Objective objective, const UnmaskConfig& cfg,
                               std::mt19937_64* dropout_rng = nullptr);

// Summed (not averaged) loss and gradient, for accumulation across micro-batches.
template <typename T>
LossAndGrads<T> loss_sum_and_grads(const Model<T>& model, const LossBatch& batch,
                                   Objective objective, const UnmaskConfig& cfg,
                                   std::mt19937_64* dropout_rng = nullptr);

// Forward-only mean loss (no dropout).
template <typename T>
T evaluate_loss(const Model<T>& model, const LossBatch& batch, Objective objective,
                const UnmaskConfig& cfg);

// Adds zero-initialized B and random A factors on the query and value
// projections, freezes every non-head base tensor.
template <typename T>
void apply_lora(Model<T>& model, const LoraSpec& lora, std::uint64_t seed);

// Drops the LM head (if any) and attaches a fresh SL head of n_labels classes.
template <typename T>
void attach_sl_head(Model<T>& model, std::size_t n_labels, std::uint64_t seed);

template <typename T>
void set_all_trainable(Model<T>& model, bool trainable);

// n_blocks * 2 * (d_model * r + r * d_model) + head parameters.
std::size_t lora_trainable_count(const ModelSpec& spec, const LoraSpec& lora);

}  // namespace unmask
