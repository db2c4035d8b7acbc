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
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "unmask/data.h"
#include "unmask/eval.h"
#include "unmask/model.h"
#include "unmask/sweep.h"
#include "unmask/train.h"

namespace unmask {

// Word pieces used by every command-line run.
inline constexpr std::size_t kPieceWidth = 4;

struct SlData {
  std::vector<TaggedSentence> train;
  std::vector<TaggedSentence> valid;
  std::vector<TaggedSentence> test;  // may be empty
  std::vector<std::string> types;    // empty: collected from the splits
};

// Next-word synthetic task with fixed data seeds 1, 2 and 3 for the splits.
SlData synthetic_data(std::size_t n_train = 4000, std::size_t n_valid = 500, std::size_t n_test = 500);

// CoNLL (token first, tag last) or span JSONL when the extension is .jsonl.
std::vector<TaggedSentence> read_tagged(const std::filesystem::path& path);

// Backbone shape for from-scratch runs; vocab_size and n_labels are filled in.
struct ScratchShape {
  std::size_t n_blocks = 4;
  std::size_t d_model = 32;
  std::size_t n_heads = 2;
  std::size_t d_ff = 64;
  std::size_t max_len = 16;
  double dropout = 0.0;
  std::size_t vocab_limit = 1000;
};

struct CellReports {
  EvalReport validation;
  std::optional<EvalReport> test;
  std::vector<double> epoch_loss;
};

// Everything a fine-tuning cell needs. A pretrained backbone brings its own
// vocabulary; otherwise one is built from the training words and each seed
// initializes a fresh model.
class SlExperiment {
 public:
  SlExperiment(const SlData& data, const ScratchShape& shape, TrainConfig cfg);
  SlExperiment(const SlData& data, Model<float> backbone, const std::vector<std::string>& vocab,
               TrainConfig cfg);

  void use_lora(const LoraSpec& lora) { lora_ = lora; }

  std::size_t n_blocks() const { return spec_.n_blocks; }
  const TrainConfig& config() const { return cfg_; }
  const Vocab& vocab() const { return vocab_; }
  const LabelSet& labels() const { return labels_; }
  bool has_test() const { return !test_.sequences.empty(); }
  std::size_t truncated() const { return train_.truncated + valid_.truncated + test_.truncated; }

  // Trains one (code, seed) cell and scores it with the same unmask config.
  // Throws NonBinaryCode, IndivisibleBlockCount or NonFiniteLoss.
  CellReports run(const std::string& code, std::uint64_t seed, std::ostream* log = nullptr,
                  Model<float>* trained = nullptr) const;

  CellRunner runner() const;

 private:
  void encode(const SlData& data);

  TrainConfig cfg_;
  ModelSpec spec_;
  std::optional<Model<float>> backbone_;
  std::optional<LoraSpec> lora_;
  Vocab vocab_;
  LabelSet labels_;
  EncodedSplit train_, valid_, test_;
};

}  // namespace unmask
