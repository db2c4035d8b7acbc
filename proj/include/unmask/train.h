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
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "unmask/checkpoint.h"
#include "unmask/data.h"
#include "unmask/eval.h"
#include "unmask/masking.h"
#include "unmask/model.h"

namespace unmask {

inline const std::vector<std::uint64_t> kDefaultSeeds{120, 121, 122, 123, 124};

struct TrainConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-5;
  double weight_decay = 0.1;
  double clip_norm = 1.0;
  std::size_t accum_steps = 4;
  std::size_t batch_size = 16;
  std::size_t epochs = 5;
  std::vector<std::uint64_t> seeds = kDefaultSeeds;

  static TrainConfig finetune_defaults() { return {}; }
  static TrainConfig pretrain_defaults();
  // Throws InvalidConfig.
  void validate() const;
};

struct CheckpointSchedule {
  std::size_t per_epoch = 5;
  bool include_init = true;
  std::size_t epochs = 10;

  std::size_t total() const { return epochs * per_epoch + (include_init ? 1 : 0); }
  // Optimizer step counts after which a checkpoint is taken, init (0) first
  // when included. Each epoch splits into per_epoch intervals of
  // steps_per_epoch / per_epoch steps, the remainder going to the last one.
  std::vector<std::size_t> save_steps(std::size_t steps_per_epoch) const;
};

template <typename T>
struct AdamState {
  Gradients<T> m;
  Gradients<T> v;
  std::size_t step = 0;
};

// Decoupled AdamW at learning rate lr. Weight decay touches only params with
// the decay flag and is applied before the moment update. Throws ShapeMismatch.
template <typename T>
void adamw_step(ParamSet<T>& params, const Gradients<T>& grads, AdamState<T>& state,
                const TrainConfig& cfg, double lr);

// base_lr * 0.5 * (1 + cos(pi * step / total_steps)).
double cosine_lr(std::size_t step, std::size_t total_steps, double base_lr);

template <typename T>
double global_grad_norm(const Gradients<T>& grads);

// Scales grads by max_norm / (norm + 1e-6) when the norm exceeds max_norm.
// Returns the norm before clipping.
template <typename T>
double clip_grad_norm(Gradients<T>& grads, double max_norm);

// One JSONL record per optimizer step.
struct StepRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  double grad_norm = 0.0;
};
void write_step_record(std::ostream& out, const StepRecord& r);

// ---- sequence labeling ------------------------------------------------------

// A split ready for training and scoring. gold holds the labels of the kept
// (non-truncated) words of each sentence.
struct EncodedSplit {
  std::vector<SlSequence> sequences;
  std::vector<std::vector<std::string>> gold;
  std::size_t truncated = 0;
};

EncodedSplit encode_split(const std::vector<TaggedSentence>& sentences, const Splitter& splitter,
                          const Vocab& vocab, const LabelSet& labels,
                          std::size_t max_len = kMaxSequenceLength);

struct SlOptions {
  // Must cover the model's block count.
  UnmaskConfig unmask = UnmaskConfig::all_masked(1, 1);
  bool use_lora = false;
  LoraSpec lora;
  std::uint64_t seed = 120;
  int pad_id = 0;
  std::ostream* log = nullptr;  // JSONL step log
};

template <typename T = float>
struct SlResult {
  Model<T> model;
  std::vector<double> epoch_loss;  // mean training loss per epoch
  std::size_t steps = 0;
};

// Trains a model that already carries an SL head. The unmask config is used
// for every forward pass; the last-epoch model is returned.
// Throws NonFiniteLoss.
template <typename T>
SlResult<T> train_sl(Model<T> model, const EncodedSplit& train, const TrainConfig& cfg,
                     const SlOptions& opts);

// Word-level label sequences predicted with the given config.
std::vector<std::vector<std::string>> predict_sl(const Model<float>& model, const EncodedSplit& split,
                                                 const LabelSet& labels, const UnmaskConfig& unmask,
                                                 int pad_id, std::size_t batch_size = 64);

EvalReport evaluate_sl(const Model<float>& model, const EncodedSplit& split, const LabelSet& labels,
                       const UnmaskConfig& unmask, int pad_id);

// ---- language-model pretraining ----------------------------------------------

struct PretrainOptions {
  Objective objective = Objective::kClm;
  double mlm_prob = kDefaultMlmProbability;
  CheckpointSchedule schedule;
  std::uint64_t seed = 120;
  int pad_id = 0;
  std::ostream* log = nullptr;
  // Called for every scheduled checkpoint, index 0 first.
  std::function<void(std::size_t index, const Model<float>&, const CheckpointMeta&)> on_checkpoint;
};

// CLM runs all-causal, MLM all-full. Data order, dropout and initial weights
// depend only on the seed, so both objectives see identical batches.
// Returns the number of checkpoints emitted. Throws NonFiniteLoss.
std::size_t pretrain(Model<float>& model, const std::vector<std::vector<int>>& blocks,
                     const Vocab& vocab, const TrainConfig& cfg, const PretrainOptions& opts);

// ---- checkpoint grid -----------------------------------------------------------

enum class Variant { kEncoder, kDecoder, kDecoderUnmask };
inline constexpr Variant kAllVariants[] = {Variant::kEncoder, Variant::kDecoder,
                                           Variant::kDecoderUnmask};
std::string_view variant_name(Variant v);  // "encoder", "decoder", "decoder-unmask"

struct GridCell {
  std::string task;
  std::size_t checkpoint = 0;
  Variant variant = Variant::kEncoder;
  std::uint64_t seed = 0;
  std::string split;
  double value = 0.0;
};

struct GridTask {
  std::string name;
  EncodedSplit train;
  EncodedSplit valid;
  LabelSet labels;
};

// Fine-tunes every checkpoint under every variant and seed: the encoder
// variant starts from the MLM checkpoints with full masks, decoder from the
// CLM checkpoints with causal masks, decoder-unmask from the CLM checkpoints
// with full masks. Rows come out ordered by checkpoint, variant, seed.
std::vector<GridCell> checkpoint_sweep_finetune(const std::vector<std::filesystem::path>& encoder,
                                                const std::vector<std::filesystem::path>& decoder,
                                                const GridTask& task, const TrainConfig& cfg,
                                                std::size_t jobs = 1);

struct GridRow {
  std::string task;
  std::size_t checkpoint = 0;
  std::string variant;
  std::string split;
  double mean = 0.0;
  double std = 0.0;
  std::size_t n_seeds = 0;

  bool operator==(const GridRow&) const = default;
};

// Mean and population std per (task, checkpoint, variant, split).
std::vector<GridRow> aggregate_grid(const std::vector<GridCell>& cells);

// Header: task,checkpoint,variant,split,mean,std,n_seeds
void write_grid_csv(std::ostream& out, const std::vector<GridRow>& rows);
std::vector<GridRow> read_grid_csv(std::istream& in);

}  // namespace unmask
