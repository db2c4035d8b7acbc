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

#include "unmask/train.h"

#include <cmath>
#include <numbers>
#include <sstream>

#include "test_util.h"
#include "unmask/synthetic.h"

namespace unmask {
namespace {

ParamSet<double> scalar_params(double w, bool decay = true) {
  ParamSet<double> ps;
  ps.add("w", {1}, decay).value[0] = w;
  return ps;
}

TEST(AdamW, ZeroGradientZeroDecayIsFixedPoint) {
  auto ps = scalar_params(0.7);
  TrainConfig cfg;
  cfg.weight_decay = 0.0;
  AdamState<double> st;
  adamw_step(ps, Gradients<double>{{0.0}}, st, cfg, 1e-3);
  EXPECT_EQ(ps[0].value[0], 0.7);
}

TEST(AdamW, TwoStepsMatchHandArithmetic) {
  TrainConfig cfg;
  const double lr = 0.01, g1 = 0.5, g2 = -0.25;
  auto ps = scalar_params(1.0);
  AdamState<double> st;
  adamw_step(ps, Gradients<double>{{g1}}, st, cfg, lr);
  adamw_step(ps, Gradients<double>{{g2}}, st, cfg, lr);
  // Hand-unrolled decoupled AdamW with bias correction.
  double w = 1.0;
  w *= 1 - lr * 0.1;
  double m = 0.1 * g1, v = 0.05 * g1 * g1;
  w -= lr * (m / 0.1) / (std::sqrt(v / 0.05) + 1e-5);
  w *= 1 - lr * 0.1;
  m = 0.9 * m + 0.1 * g2;
  v = 0.95 * v + 0.05 * g2 * g2;
  w -= lr * (m / (1 - 0.81)) / (std::sqrt(v / (1 - 0.9025)) + 1e-5);
  EXPECT_NEAR(ps[0].value[0], w, 1e-12);
}

TEST(AdamW, DecoupledDecayOnWeightsOnly) {
  TrainConfig cfg;
  ParamSet<double> ps;
  ps.add("w", {1}, true).value[0] = 1.0;
  ps.add("b", {1}, false).value[0] = 1.0;
  AdamState<double> st;
  adamw_step(ps, Gradients<double>{{0.0}, {0.0}}, st, cfg, 2e-4);
  EXPECT_DOUBLE_EQ(ps[0].value[0], 1.0 - 2e-4 * 0.1);
  EXPECT_EQ(ps[1].value[0], 1.0);
}

TEST(AdamW, FrozenAndShapeChecks) {
  TrainConfig cfg;
  auto ps = scalar_params(1.0);
  ps[0].trainable = false;
  AdamState<double> st;
  adamw_step(ps, Gradients<double>{{}}, st, cfg, 1.0);
  EXPECT_EQ(ps[0].value[0], 1.0);
  ps[0].trainable = true;
  AdamState<double> st2;
  EXPECT_ERROR_CODE(adamw_step(ps, Gradients<double>{{1.0, 2.0}}, st2, cfg, 1.0),
                    ErrorCode::kShapeMismatch);
  EXPECT_ERROR_CODE(adamw_step(ps, Gradients<double>{}, st2, cfg, 1.0), ErrorCode::kShapeMismatch);
}

TEST(Cosine, Endpoints) {
  EXPECT_DOUBLE_EQ(cosine_lr(0, 100, 2e-4), 2e-4);
  EXPECT_NEAR(cosine_lr(100, 100, 2e-4), 0.0, 1e-20);
  EXPECT_NEAR(cosine_lr(50, 100, 2e-4), 1e-4, 1e-18);
  EXPECT_ERROR_CODE(cosine_lr(101, 100, 1.0), ErrorCode::kIndexOutOfRange);
}

TEST(Clip, PostClipNormBounded) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 5.0);
  for (int trial = 0; trial < 50; ++trial) {
    Gradients<double> g(3);
    for (auto& v : g) {
      v.resize(7);
      for (auto& x : v) x = n(rng);
    }
    const double before = global_grad_norm(g);
    EXPECT_EQ(clip_grad_norm(g, 1.0), before);
    EXPECT_LE(global_grad_norm(g), 1.0 + 1e-6);
  }
  Gradients<double> small{{0.3, 0.4}};
  clip_grad_norm(small, 1.0);
  EXPECT_EQ(small[0][1], 0.4);
}

TEST(Schedule, CheckpointCounts) {
  CheckpointSchedule full{5, true, 10};
  EXPECT_EQ(full.total(), 51u);
  EXPECT_EQ(full.save_steps(20).size(), 51u);
  CheckpointSchedule desk{5, true, 2};
  EXPECT_EQ(desk.total(), 11u);
  EXPECT_EQ(desk.save_steps(12), (std::vector<std::size_t>{0, 2, 4, 6, 8, 12, 14, 16, 18, 20, 24}));
  CheckpointSchedule no_init{5, false, 1};
  EXPECT_EQ(no_init.save_steps(5), (std::vector<std::size_t>{1, 2, 3, 4, 5}));
  EXPECT_ERROR_CODE(desk.save_steps(4), ErrorCode::kInvalidConfig);
}

TEST(Config, Validation) {
  TrainConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  EXPECT_EQ(cfg.seeds, (std::vector<std::uint64_t>{120, 121, 122, 123, 124}));
  cfg.seeds.clear();
  EXPECT_ERROR_CODE(cfg.validate(), ErrorCode::kInvalidConfig);
  TrainConfig bad;
  bad.lr = 0;
  EXPECT_ERROR_CODE(bad.validate(), ErrorCode::kInvalidConfig);
  const auto pre = TrainConfig::pretrain_defaults();
  EXPECT_EQ(pre.batch_size, 64u);
  EXPECT_EQ(pre.accum_steps, 8u);
  EXPECT_EQ(pre.epochs, 10u);
}

// Small synthetic SL setup shared by the loop tests.
struct Fixture {
  Vocab vocab;
  LabelSet labels{synthetic_types()};
  EncodedSplit train;
  ModelSpec spec;

  explicit Fixture(std::size_t n) {
    const auto sentences = make_next_word_task(n, 7);
    std::vector<std::vector<std::string>> words;
    for (const auto& s : sentences) words.push_back(s.words);
    vocab = Vocab::build(words, ChunkSplitter(4), 100);
    train = encode_split(sentences, ChunkSplitter(4), vocab, labels);
    spec = testing::tiny_spec(2, vocab.size(), labels.size());
    spec.lm_head = false;
  }

  SlOptions options(const std::string& code = "11") const {
    SlOptions o;
    o.unmask = UnmaskConfig::parse(code, spec.n_blocks);
    o.pad_id = vocab.pad_id();
    return o;
  }
};

TEST(TrainSl, AccumulationMatchesLargeBatch) {
  Fixture f(12);
  const auto init = Model<float>::initialize(f.spec, 1).cast<double>();
  TrainConfig big;
  big.batch_size = 12;
  big.accum_steps = 1;
  big.epochs = 1;
  big.lr = 1e-2;
  TrainConfig split = big;
  split.batch_size = 3;
  split.accum_steps = 4;
  const auto a = train_sl(init, f.train, big, f.options());
  const auto b = train_sl(init, f.train, split, f.options());
  ASSERT_EQ(a.steps, 1u);
  ASSERT_EQ(b.steps, 1u);
  double worst = 0.0;
  std::size_t moved = 0;
  for (std::size_t i = 0; i < init.params().size(); ++i) {
    for (std::size_t j = 0; j < init.params()[i].size(); ++j) {
      const double w0 = init.params()[i].value[j];
      const double da = a.model.params()[i].value[j] - w0, db = b.model.params()[i].value[j] - w0;
      // Key biases have an analytically zero gradient; rounding noise sits near 1e-19.
      if (std::abs(da) < 1e-12 && std::abs(db) < 1e-12) continue;
      ++moved;
      worst = std::max(worst, std::abs(da - db) / std::max(std::abs(da), std::abs(db)));
    }
  }
  EXPECT_GT(moved, 100u);
  EXPECT_LT(worst, 1e-6);
}

TEST(TrainSl, DeterministicLossCurve) {
  Fixture f(40);
  auto init = Model<float>::initialize(f.spec, 2);
  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.accum_steps = 2;
  cfg.epochs = 2;
  f.spec.dropout = 0.1;
  init.mutable_spec().dropout = 0.1;
  std::ostringstream log_a, log_b;
  auto oa = f.options();
  oa.log = &log_a;
  auto ob = f.options();
  ob.log = &log_b;
  train_sl(init, f.train, cfg, oa);
  train_sl(init, f.train, cfg, ob);
  EXPECT_EQ(log_a.str(), log_b.str());
  std::istringstream lines(log_a.str());
  std::string first;
  std::getline(lines, first);
  const auto rec = nlohmann::json::parse(first);
  for (const char* k : {"step", "epoch", "lr", "loss", "grad_norm"}) EXPECT_TRUE(rec.contains(k)) << k;
  EXPECT_EQ(rec["step"], 1);
}

TEST(TrainSl, LoraLeavesBaseUntouched) {
  Fixture f(16);
  const auto init = Model<float>::initialize(f.spec, 3);
  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.accum_steps = 1;
  cfg.epochs = 1;
  cfg.lr = 1e-2;
  auto opts = f.options();
  opts.use_lora = true;
  opts.lora = LoraSpec{2, 4.0, 0.1, {"query", "value"}};
  const auto run = train_sl(init, f.train, cfg, opts);
  for (const auto& p : init.params()) {
    const auto& q = run.model.params().at(p.name);
    if (p.name.starts_with("sl_head")) {
      EXPECT_NE(checksum(p), checksum(q)) << p.name;
    } else {
      EXPECT_EQ(checksum(p), checksum(q)) << p.name;
    }
  }
  EXPECT_NE(checksum(run.model.params().at("blocks.0.attn.q.lora_b")),
            checksum(Param<float>{"", {}, std::vector<float>(run.model.params().at("blocks.0.attn.q.lora_b").size()), true, true}));
}

TEST(TrainSl, NonFiniteLossAborts) {
  Fixture f(8);
  auto init = Model<float>::initialize(f.spec, 4);
  init.params().at("sl_head.b").value[0] = std::numeric_limits<float>::quiet_NaN();
  TrainConfig cfg;
  cfg.epochs = 1;
  EXPECT_ERROR_CODE(train_sl(init, f.train, cfg, f.options()), ErrorCode::kNonFiniteLoss);
}

TEST(TrainSl, MissingHeadAndEmptySplit) {
  Fixture f(4);
  auto no_head = f.spec;
  no_head.n_labels = 0;
  no_head.lm_head = true;
  TrainConfig cfg;
  EXPECT_ERROR_CODE(train_sl(Model<float>::initialize(no_head, 1), f.train, cfg, f.options()),
                    ErrorCode::kMissingHead);
  EXPECT_ERROR_CODE(train_sl(Model<float>::initialize(f.spec, 1), EncodedSplit{}, cfg, f.options()),
                    ErrorCode::kInvalidConfig);
}

TEST(EncodeSplit, GoldCoversKeptWordsOnly) {
  TaggedSentence s{{"aaaaaaaa", "b", "c"}, {"B-X", "O", "B-X"}};
  LabelSet labels({"X"});
  auto vocab = Vocab::build({s.words}, ChunkSplitter(4), 50);
  auto split = encode_split({s}, ChunkSplitter(4), vocab, labels, 3);
  EXPECT_EQ(split.truncated, 1u);
  EXPECT_EQ(split.gold[0], (std::vector<std::string>{"B-X", "O"}));
  Fixture f(4);
  auto model = Model<float>::initialize(f.spec, 5);
  auto pred = predict_sl(model, f.train, f.labels, f.options().unmask, f.vocab.pad_id(), 3);
  ASSERT_EQ(pred.size(), f.train.gold.size());
  for (std::size_t i = 0; i < pred.size(); ++i) EXPECT_EQ(pred[i].size(), f.train.gold[i].size());
}

TEST(Pretrain, ClmLearnsRepeatingPattern) {
  std::vector<std::string> tokens{"[PAD]", "[UNK]", "[MASK]", "[EOS]", "x", "y"};
  Vocab vocab(tokens);
  std::vector<std::vector<int>> stream(1);
  for (int i = 0; i < 20 * 16; ++i) stream[0].push_back(4 + i % 2);
  const auto blocks = pack_blocks(stream, 16);
  auto spec = testing::tiny_spec(2, vocab.size(), 0);
  spec.max_len = 16;
  auto model = Model<float>::initialize(spec, 6);
  TrainConfig cfg;
  cfg.lr = 3e-3;
  cfg.batch_size = 2;
  cfg.accum_steps = 1;
  cfg.epochs = 20;  // 10 steps per epoch, 200 steps in total
  PretrainOptions opts;
  opts.objective = Objective::kClm;
  opts.schedule = {5, true, 0};
  std::vector<double> losses;
  std::ostringstream log;
  opts.log = &log;
  std::size_t seen = 0;
  opts.on_checkpoint = [&](std::size_t index, const Model<float>&, const CheckpointMeta& meta) {
    EXPECT_EQ(index, seen++);
    EXPECT_EQ(meta.objective, "clm");
  };
  EXPECT_EQ(pretrain(model, blocks, vocab, cfg, opts), 101u);
  EXPECT_EQ(seen, 101u);
  const auto last = nlohmann::json::parse(log.str().substr(log.str().rfind('\n', log.str().size() - 2) + 1));
  EXPECT_EQ(last["step"], 200);
  LossBatch lb = make_clm_batch(std::span<const std::vector<int>>(blocks).subspan(0, 2), 0);
  EXPECT_LT(evaluate_loss(model, lb, Objective::kClm, UnmaskConfig::all_masked(1, 2)), std::log(2.0));
}

TEST(Pretrain, ObjectivesShareInitAndOrder) {
  std::vector<std::string> tokens{"[PAD]", "[UNK]", "[MASK]", "[EOS]", "x", "y", "z"};
  Vocab vocab(tokens);
  std::vector<std::vector<int>> stream(1);
  std::mt19937_64 rng(1);
  for (int i = 0; i < 10 * 8; ++i) stream[0].push_back(4 + static_cast<int>(rng() % 3));
  const auto blocks = pack_blocks(stream, 8);
  auto spec = testing::tiny_spec(2, vocab.size(), 0);
  TrainConfig cfg;
  cfg.batch_size = 2;
  cfg.accum_steps = 1;
  cfg.epochs = 2;
  std::vector<std::uint64_t> init_sums;
  for (auto objective : {Objective::kClm, Objective::kMlm}) {
    auto model = Model<float>::initialize(spec, 9);
    PretrainOptions opts;
    opts.objective = objective;
    opts.schedule = {5, true, 0};
    std::size_t n = 0;
    opts.on_checkpoint = [&](std::size_t index, const Model<float>& m, const CheckpointMeta&) {
      if (index == 0) init_sums.push_back(checksum(m.params()[0]));
      ++n;
    };
    EXPECT_EQ(pretrain(model, blocks, vocab, cfg, opts), 11u);
    EXPECT_EQ(n, 11u);
  }
  EXPECT_EQ(init_sums[0], init_sums[1]);
}

TEST(Pretrain, RejectsBadInputs) {
  Vocab vocab({"[PAD]", "[UNK]", "[MASK]", "[EOS]", "x"});
  auto spec = testing::tiny_spec(2, vocab.size(), 0);
  auto model = Model<float>::initialize(spec, 1);
  TrainConfig cfg;
  PretrainOptions opts;
  opts.objective = Objective::kSl;
  EXPECT_ERROR_CODE(pretrain(model, {{4, 4}}, vocab, cfg, opts), ErrorCode::kInvalidConfig);
  opts.objective = Objective::kClm;
  EXPECT_ERROR_CODE(pretrain(model, {}, vocab, cfg, opts), ErrorCode::kInvalidConfig);
}

TEST(Grid, AggregateAndCsvRoundTrip) {
  std::vector<GridCell> cells;
  for (std::size_t ck = 0; ck < 2; ++ck) {
    for (auto v : kAllVariants) {
      for (std::uint64_t seed : {120, 121}) {
        cells.push_back({"synthetic", ck, v, seed, "validation", 0.1 * static_cast<double>(seed - 119)});
      }
    }
  }
  const auto rows = aggregate_grid(cells);
  ASSERT_EQ(rows.size(), 6u);
  EXPECT_EQ(rows[0].variant, "encoder");
  EXPECT_EQ(rows[2].variant, "decoder-unmask");
  EXPECT_NEAR(rows[0].mean, 0.15, 1e-15);
  EXPECT_NEAR(rows[0].std, 0.05, 1e-15);
  std::stringstream io;
  write_grid_csv(io, rows);
  EXPECT_EQ(io.str().substr(0, io.str().find('\n')), "task,checkpoint,variant,split,mean,std,n_seeds");
  EXPECT_EQ(read_grid_csv(io), rows);
}

}  // namespace
}  // namespace unmask
