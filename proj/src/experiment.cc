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

#include "unmask/experiment.h"

#include <fstream>
#include <sstream>

#include "unmask/masking.h"
#include "unmask/synthetic.h"

namespace unmask {

SlData synthetic_data(std::size_t n_train, std::size_t n_valid, std::size_t n_test) {
  SlData d;
  d.train = make_next_word_task(n_train, 1);
  d.valid = make_next_word_task(n_valid, 2);
  if (n_test > 0) d.test = make_next_word_task(n_test, 3);
  d.types = synthetic_types();
  return d;
}

std::vector<TaggedSentence> read_tagged(const std::filesystem::path& path) {
  if (path.extension() == ".jsonl") {
    std::vector<TaggedSentence> out;
    for (const auto& ann : read_span_jsonl(path)) out.push_back(tag_annotation(ann));
    return out;
  }
  std::ifstream probe(path);
  if (!probe) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::string line;
  std::size_t width = 0;
  while (std::getline(probe, line)) {
    std::istringstream cols(line);
    std::string c;
    std::size_t n = 0;
    while (cols >> c) ++n;
    if (n > 0 && line.rfind("-DOCSTART-", 0) != 0) {
      width = n;
      break;
    }
  }
  if (width < 2) throw Error(ErrorCode::kParse, path.string() + ": expected token and tag columns");
  return read_conll(path, 0, width - 1);
}

namespace {

LabelSet collect_labels(const SlData& data) {
  if (!data.types.empty()) return LabelSet(data.types);
  std::vector<TaggedSentence> all = data.train;
  all.insert(all.end(), data.valid.begin(), data.valid.end());
  all.insert(all.end(), data.test.begin(), data.test.end());
  return LabelSet::from_sentences(all);
}

}  // namespace

SlExperiment::SlExperiment(const SlData& data, const ScratchShape& shape, TrainConfig cfg)
    : cfg_(std::move(cfg)), labels_(collect_labels(data)) {
  std::vector<std::vector<std::string>> words;
  for (const auto& s : data.train) words.push_back(s.words);
  vocab_ = Vocab::build(words, ChunkSplitter(kPieceWidth), shape.vocab_limit);
  spec_.n_blocks = shape.n_blocks;
  spec_.d_model = shape.d_model;
  spec_.n_heads = shape.n_heads;
  spec_.d_ff = shape.d_ff;
  spec_.max_len = shape.max_len;
  spec_.dropout = shape.dropout;
  spec_.vocab_size = vocab_.size();
  spec_.n_labels = labels_.size();
  spec_.lm_head = false;
  encode(data);
}

SlExperiment::SlExperiment(const SlData& data, Model<float> backbone,
                           const std::vector<std::string>& vocab, TrainConfig cfg)
    : cfg_(std::move(cfg)),
      spec_(backbone.spec()),
      backbone_(std::move(backbone)),
      vocab_(vocab),
      labels_(collect_labels(data)) {
  encode(data);
}

void SlExperiment::encode(const SlData& data) {
  cfg_.validate();
  if (data.train.empty() || data.valid.empty()) {
    throw Error(ErrorCode::kInvalidConfig, "training and validation splits must be nonempty");
  }
  const ChunkSplitter splitter(kPieceWidth);
  train_ = encode_split(data.train, splitter, vocab_, labels_, spec_.max_len);
  valid_ = encode_split(data.valid, splitter, vocab_, labels_, spec_.max_len);
  if (!data.test.empty()) test_ = encode_split(data.test, splitter, vocab_, labels_, spec_.max_len);
}

CellReports SlExperiment::run(const std::string& code, std::uint64_t seed, std::ostream* log,
                              Model<float>* trained) const {
  SlOptions opts;
  opts.unmask = UnmaskConfig::parse(code, spec_.n_blocks);
  opts.seed = seed;
  opts.pad_id = vocab_.pad_id();
  opts.log = log;
  if (lora_) {
    opts.use_lora = true;
    opts.lora = *lora_;
  }
  Model<float> model = [&] {
    if (!backbone_) return Model<float>::initialize(spec_, seed);
    Model<float> m = *backbone_;
    attach_sl_head(m, labels_.size(), seed);
    return m;
  }();
  auto result = train_sl(std::move(model), train_, cfg_, opts);
  CellReports out;
  out.epoch_loss = result.epoch_loss;
  out.validation = evaluate_sl(result.model, valid_, labels_, opts.unmask, opts.pad_id);
  if (has_test()) out.test = evaluate_sl(result.model, test_, labels_, opts.unmask, opts.pad_id);
  if (trained) *trained = std::move(result.model);
  return out;
}

CellRunner SlExperiment::runner() const {
  if (!has_test()) throw Error(ErrorCode::kInvalidConfig, "a sweep needs a test split");
  return [this](const std::string& code, std::uint64_t seed) {
    const auto r = run(code, seed);
    return CellScores{r.validation.micro_f1, r.test->micro_f1};
  };
}

}  // namespace unmask
