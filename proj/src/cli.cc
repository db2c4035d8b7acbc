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

#include "unmask/cli.h"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>
#include <tuple>

#include "CLI11.hpp"
#include "json.hpp"
#include "unmask/checkpoint.h"
#include "unmask/experiment.h"
#include "unmask/instruction.h"
#include "unmask/masking.h"
#include "unmask/sweep.h"
#include "unmask/train.h"

#ifndef UNMASK_LAB_VERSION
#define UNMASK_LAB_VERSION "unknown"
#endif

namespace unmask::cli {

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kNonFiniteLoss: return kExitNumeric;
    case ErrorCode::kIncompleteGrid: return kExitIncompleteGrid;
    default: return kExitUsage;
  }
}

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

fs::path resolve_out(const std::string& flag, std::string_view command) {
  if (!flag.empty()) return flag;
  const char* root = std::getenv("UNMASK_LAB_OUT");
  return fs::path(root && *root ? root : "runs") / command;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  return f;
}

void require_file(const std::string& path, std::string_view flag) {
  if (path.empty()) throw Error(ErrorCode::kInvalidConfig, std::string(flag) + " is required");
  if (!fs::exists(path)) throw Error(ErrorCode::kIo, "missing file " + path);
}

// Effective value of every option of a subcommand after flags, config file and defaults.
json resolved_options(const CLI::App& sub) {
  json out = json::object();
  for (const CLI::Option* opt : sub.get_options()) {
    const std::string name = opt->get_single_name();
    if (name.empty() || name == "help") continue;
    if (opt->get_expected_max() == 0) {
      out[name] = opt->count() > 0 && opt->as<bool>();
    } else if (opt->count() == 0) {
      out[name] = opt->get_default_str();
    } else if (opt->get_expected_max() > 1) {
      out[name] = opt->results();
    } else {
      out[name] = opt->results().back();
    }
  }
  return out;
}

class RunManifest {
 public:
  RunManifest(fs::path dir, const std::vector<std::string>& args, const CLI::App& sub,
              const std::vector<std::uint64_t>& seeds, std::vector<std::string> outputs)
      : dir_(std::move(dir)) {
    fs::create_directories(dir_);
    doc_ = {{"command_line", args},
            {"subcommand", sub.get_name()},
            {"resolved_config", resolved_options(sub)},
            {"seeds", seeds},
            {"code_version", UNMASK_LAB_VERSION},
            {"started_at", utc_now()},
            {"finished_at", nullptr},
            {"status", "running"},
            {"output_dir", dir_.string()},
            {"outputs", std::move(outputs)}};
    flush();
  }

  RunManifest(const RunManifest&) = delete;
  RunManifest& operator=(const RunManifest&) = delete;

  ~RunManifest() {
    if (finished_) return;
    try {
      finish("failed");
    } catch (...) {
    }
  }

  void finish(const std::string& status) {
    doc_["finished_at"] = utc_now();
    doc_["status"] = status;
    finished_ = true;
    flush();
  }

  const fs::path& dir() const { return dir_; }

 private:
  void flush() const { open_out(dir_ / "run_manifest.json") << doc_.dump(2) << '\n'; }

  fs::path dir_;
  json doc_;
  bool finished_ = false;
};

// ---- shared option groups -------------------------------------------------------

struct TaskFlags {
  std::string task = "synthetic";
  std::string train, valid, test;
  std::size_t n_train = 4000, n_valid = 500, n_test = 500;
  std::uint64_t split_seed = 1;

  void add(CLI::App* sub) {
    sub->add_option("--task", task, "Task name")
        ->check(CLI::IsMember({"ner", "absa", "trigger", "chunk", "synthetic"}))
        ->capture_default_str();
    sub->add_option("--train", train, "Training split (CoNLL or span JSONL)");
    sub->add_option("--valid", valid, "Validation split; default holds out 10% of --train");
    sub->add_option("--split-seed", split_seed, "Seed for the held-out validation sample")
        ->capture_default_str();
    sub->add_option("--test", test, "Test split");
    sub->add_option("--n-train", n_train, "Synthetic training sentences")->capture_default_str();
    sub->add_option("--n-valid", n_valid, "Synthetic validation sentences")->capture_default_str();
    sub->add_option("--n-test", n_test, "Synthetic test sentences")->capture_default_str();
  }

  void check(bool need_test) const {
    if (task == "synthetic") return;
    require_file(train, "--train");
    if (!valid.empty()) require_file(valid, "--valid");
    if (need_test || !test.empty()) require_file(test, "--test");
  }

  SlData load() const {
    if (task == "synthetic") return synthetic_data(n_train, n_valid, n_test);
    SlData d;
    d.train = read_tagged(train);
    if (valid.empty()) {
      std::tie(d.train, d.valid) = split_validation(std::move(d.train), 0.1, split_seed);
    } else {
      d.valid = read_tagged(valid);
    }
    if (!test.empty()) d.test = read_tagged(test);
    return d;
  }
};

struct TrainFlags {
  TrainConfig cfg;

  explicit TrainFlags(TrainConfig defaults) : cfg(std::move(defaults)) {}

  void add(CLI::App* sub) {
    sub->add_option("--lr", cfg.lr, "Peak learning rate")->capture_default_str();
    sub->add_option("--batch-size", cfg.batch_size, "Micro-batch size")->capture_default_str();
    sub->add_option("--accum-steps", cfg.accum_steps, "Micro-batches per step")->capture_default_str();
    sub->add_option("--epochs", cfg.epochs, "Training epochs")->capture_default_str();
    sub->add_option("--weight-decay", cfg.weight_decay, "AdamW decay")->capture_default_str();
    sub->add_option("--clip-norm", cfg.clip_norm, "Global gradient norm bound")->capture_default_str();
  }
};

// Fine-tuning defaults for from-scratch runs on the synthetic task.
TrainConfig finetune_defaults() {
  TrainConfig c;
  c.lr = 2e-3;
  c.batch_size = 4;
  c.accum_steps = 1;
  return c;
}

struct ModelFlags {
  std::string checkpoint;
  ScratchShape shape;
  bool lora = false;
  LoraSpec lora_spec{8, 16.0, 0.1, {"query", "value"}};

  void add(CLI::App* sub) {
    sub->add_option("--checkpoint", checkpoint, "Pretrained checkpoint directory");
    sub->add_option("--blocks", shape.n_blocks, "Blocks for a from-scratch model")->capture_default_str();
    sub->add_option("--d-model", shape.d_model, "Hidden width")->capture_default_str();
    sub->add_option("--heads", shape.n_heads, "Attention heads")->capture_default_str();
    sub->add_option("--d-ff", shape.d_ff, "Feed-forward width")->capture_default_str();
    sub->add_option("--max-len", shape.max_len, "Maximum pieces per sentence")->capture_default_str();
    sub->add_option("--dropout", shape.dropout, "Dropout probability")->capture_default_str();
    sub->add_option("--vocab-size", shape.vocab_limit, "Vocabulary cap")->capture_default_str();
    sub->add_flag("--lora,!--no-lora", lora, "Train LoRA adapters instead of all weights")
        ->capture_default_str();
    sub->add_option("--lora-rank", lora_spec.rank, "Adapter rank")->capture_default_str();
    sub->add_option("--lora-alpha", lora_spec.alpha, "Adapter scale numerator")->capture_default_str();
    sub->add_option("--lora-dropout", lora_spec.dropout, "Adapter input dropout")->capture_default_str();
  }

  std::size_t n_blocks() const {
    if (checkpoint.empty()) return shape.n_blocks;
    return load_checkpoint(checkpoint).model.spec().n_blocks;
  }

  std::unique_ptr<SlExperiment> build(const SlData& data, const TrainConfig& cfg) const {
    std::unique_ptr<SlExperiment> exp;
    if (checkpoint.empty()) {
      exp = std::make_unique<SlExperiment>(data, shape, cfg);
    } else {
      Checkpoint ck = load_checkpoint(checkpoint);
      exp = std::make_unique<SlExperiment>(data, std::move(ck.model), ck.vocab, cfg);
    }
    if (lora) exp->use_lora(lora_spec);
    return exp;
  }
};

std::vector<std::string> checkpoint_dirs(const fs::path& run) {
  const fs::path root = run / "checkpoints";
  if (!fs::is_directory(root)) throw Error(ErrorCode::kIo, "no checkpoints under " + run.string());
  std::vector<std::string> dirs;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory()) dirs.push_back(e.path().string());
  }
  std::sort(dirs.begin(), dirs.end());
  return dirs;
}

std::string checkpoint_name(std::size_t index) {
  std::ostringstream s;
  s << "ckpt-" << std::setw(3) << std::setfill('0') << index;
  return s.str();
}

// ---- commands ---------------------------------------------------------------------

struct Context {
  std::vector<std::string> args;
  std::ostream& out;
  std::ostream& err;
};

struct PretrainCommand {
  std::string objective = "clm";
  double mlm_prob = kDefaultMlmProbability;
  std::string corpus;
  std::size_t blocks = 4, d_model = 128, heads = 4, d_ff = 512, block_len = 32, vocab_size = 2000;
  double dropout = 0.1;
  std::size_t per_epoch = 5;
  std::uint64_t seed = 120;
  std::string out;
  TrainFlags train{TrainConfig::pretrain_defaults()};
  CLI::App* sub = nullptr;
  CLI::Option* mlm_opt = nullptr;

  void add(CLI::App& app) {
    sub = app.add_subcommand("pretrain", "Pretrain a small LM with a CLM or MLM objective");
    sub->add_option("--objective", objective, "clm or mlm")
        ->check(CLI::IsMember({"clm", "mlm"}))
        ->capture_default_str();
    mlm_opt = sub->add_option("--mlm-prob", mlm_prob, "Masking probability (mlm only)")
                  ->check(CLI::Range(0.0, 1.0))
                  ->capture_default_str();
    sub->add_option("--corpus", corpus, "Plain-text corpus, one sentence per line");
    sub->add_option("--blocks", blocks, "Transformer blocks")->capture_default_str();
    sub->add_option("--d-model", d_model, "Hidden width")->capture_default_str();
    sub->add_option("--heads", heads, "Attention heads")->capture_default_str();
    sub->add_option("--d-ff", d_ff, "Feed-forward width")->capture_default_str();
    sub->add_option("--block-len", block_len, "Tokens per training block")->capture_default_str();
    sub->add_option("--vocab-size", vocab_size, "Vocabulary cap")->capture_default_str();
    sub->add_option("--dropout", dropout, "Dropout probability")->capture_default_str();
    sub->add_option("--ckpt-per-epoch", per_epoch, "Checkpoints per epoch")->capture_default_str();
    sub->add_option("--seed", seed, "Initialization and data-order seed")->capture_default_str();
    sub->add_option("--out", out, "Output directory");
    train.add(sub);
  }

  int run(Context& ctx) {
    if (objective == "clm" && mlm_opt->count() > 0) {
      throw Error(ErrorCode::kInvalidConfig, "--mlm-prob only applies to --objective mlm");
    }
    require_file(corpus, "--corpus");
    train.cfg.seeds = {seed};
    train.cfg.validate();
    RunManifest manifest(resolve_out(out, "pretrain"), ctx.args, *sub, {seed},
                         {"checkpoints/", "train_log.jsonl"});
    const auto sentences = read_corpus(corpus);
    const ChunkSplitter splitter(kPieceWidth);
    const Vocab vocab = Vocab::build(sentences, splitter, vocab_size);
    const auto streams = encode_corpus(sentences, splitter, vocab);
    const auto packed = pack_blocks(streams, block_len);

    ModelSpec spec;
    spec.n_blocks = blocks;
    spec.d_model = d_model;
    spec.n_heads = heads;
    spec.d_ff = d_ff;
    spec.vocab_size = vocab.size();
    spec.max_len = block_len;
    spec.dropout = dropout;
    auto model = Model<float>::initialize(spec, seed);

    auto log = open_out(manifest.dir() / "train_log.jsonl");
    PretrainOptions opts;
    opts.objective = parse_objective(objective);
    opts.mlm_prob = mlm_prob;
    opts.schedule.per_epoch = per_epoch;
    opts.seed = seed;
    opts.pad_id = vocab.pad_id();
    opts.log = &log;
    const fs::path ckpt_root = manifest.dir() / "checkpoints";
    opts.on_checkpoint = [&](std::size_t index, const Model<float>& m, const CheckpointMeta& meta) {
      save_checkpoint(ckpt_root / checkpoint_name(index), Checkpoint{m, meta, vocab.tokens(), {}});
    };
    const std::size_t n = unmask::pretrain(model, packed, vocab, train.cfg, opts);
    manifest.finish("ok");
    ctx.out << json{{"objective", objective}, {"checkpoints", n}, {"blocks", packed.size()},
                    {"vocab_size", vocab.size()}, {"out", manifest.dir().string()}}
                   .dump()
            << '\n';
    return kExitOk;
  }
};

struct FinetuneCommand {
  TaskFlags task;
  ModelFlags model;
  TrainFlags train{finetune_defaults()};
  std::string unmask = "0";
  std::uint64_t seed = 120;
  bool save_model = false;
  std::string out;
  CLI::App* sub = nullptr;

  void add(CLI::App& app) {
    sub = app.add_subcommand("finetune", "Fine-tune one unmask config and report micro-F1");
    task.add(sub);
    model.add(sub);
    train.add(sub);
    sub->add_option("--unmask", unmask, "Binary group code, first digit = earliest group")
        ->capture_default_str();
    sub->add_option("--seed", seed, "Run seed")->capture_default_str();
    sub->add_flag("--save-model", save_model, "Write the trained model under --out/model")
        ->capture_default_str();
    sub->add_option("--out", out, "Output directory");
  }

  int run(Context& ctx) {
    UnmaskConfig::parse(unmask, model.n_blocks());
    task.check(false);
    train.cfg.seeds = {seed};
    train.cfg.validate();
    std::vector<std::string> outputs{"report.json", "train_log.jsonl"};
    if (save_model) outputs.push_back("model/");
    RunManifest manifest(resolve_out(out, "finetune"), ctx.args, *sub, {seed}, outputs);
    const auto exp = model.build(task.load(), train.cfg);
    auto log = open_out(manifest.dir() / "train_log.jsonl");
    Model<float> trained;
    const auto r = exp->run(unmask, seed, &log, save_model ? &trained : nullptr);
    json report = {{"task", task.task}, {"unmask", unmask}, {"seed", seed},
                   {"truncated_sentences", exp->truncated()},
                   {"validation", report_to_json(r.validation, true)}};
    report["test"] = r.test ? report_to_json(*r.test, true) : json(nullptr);
    open_out(manifest.dir() / "report.json") << report.dump(2) << '\n';
    if (save_model) {
      CheckpointMeta meta{"sl", 0, train.cfg.epochs, seed};
      save_checkpoint(manifest.dir() / "model",
                      Checkpoint{std::move(trained), meta, exp->vocab().tokens(), exp->labels().types()});
    }
    manifest.finish("ok");
    ctx.out << report.dump() << '\n';
    return kExitOk;
  }
};

struct SweepCommand {
  TaskFlags task;
  ModelFlags model;
  TrainFlags train{finetune_defaults()};
  std::string codes = "all";
  std::size_t groups = 4;
  std::vector<std::uint64_t> seeds{kDefaultSeeds.begin(), kDefaultSeeds.end()};
  std::size_t jobs = 1;
  std::string from_results;
  std::string model_id = "scratch";
  std::string out;
  CLI::App* sub = nullptr;

  void add(CLI::App& app) {
    sub = app.add_subcommand("sweep", "Fine-tune every unmask config over every seed");
    task.add(sub);
    model.add(sub);
    train.add(sub);
    sub->add_option("--codes", codes, "\"all\" or a comma-separated code list")->capture_default_str();
    sub->add_option("--groups", groups, "Code length m used with --codes all")->capture_default_str();
    sub->add_option("--seeds", seeds, "Seed list")->delimiter(',')->capture_default_str();
    sub->add_option("--jobs", jobs, "Parallel cells")->check(CLI::PositiveNumber)->capture_default_str();
    sub->add_option("--from-results", from_results, "Aggregate an existing results.csv only");
    sub->add_option("--model-id", model_id, "Model label for the CSV rows")->capture_default_str();
    sub->add_option("--out", out, "Output directory");
  }

  int run(Context& ctx) {
    std::vector<SweepResult> results;
    std::unique_ptr<RunManifest> manifest;
    if (!from_results.empty()) {
      require_file(from_results, "--from-results");
      std::ifstream in(from_results);
      results = read_results_csv(in);
      manifest = std::make_unique<RunManifest>(resolve_out(out, "sweep"), ctx.args, *sub, seeds,
                                               std::vector<std::string>{"aggregate.csv", "summary.json"});
    } else {
      const auto code_list = expand_codes(codes, groups);
      const std::size_t nb = model.n_blocks();
      for (const auto& c : code_list) UnmaskConfig::parse(c, nb);
      task.check(true);
      train.cfg.seeds = seeds;
      train.cfg.validate();
      manifest = std::make_unique<RunManifest>(
          resolve_out(out, "sweep"), ctx.args, *sub, seeds,
          std::vector<std::string>{"results.csv", "aggregate.csv", "summary.json"});
      const auto exp = model.build(task.load(), train.cfg);
      results = run_sweep(task.task, model_id, code_list, seeds, exp->runner(), jobs);
      auto f = open_out(manifest->dir() / "results.csv");
      write_results_csv(f, results);
    }
    const auto rows = aggregate(results);
    {
      auto f = open_out(manifest->dir() / "aggregate.csv");
      write_aggregate_csv(f, rows);
    }
    const json summary = sweep_summary(rows);
    open_out(manifest->dir() / "summary.json") << summary.dump(2) << '\n';
    manifest->finish("ok");
    ctx.out << summary.dump() << '\n';
    return kExitOk;
  }
};

struct GridCommand {
  TaskFlags task;
  TrainFlags train{finetune_defaults()};
  std::string encoder, decoder;
  std::vector<std::uint64_t> seeds{kDefaultSeeds.begin(), kDefaultSeeds.end()};
  std::size_t jobs = 1;
  std::string out;
  CLI::App* sub = nullptr;

  void add(CLI::App& app) {
    sub = app.add_subcommand("grid", "Fine-tune every pretraining checkpoint in three variants");
    task.add(sub);
    train.add(sub);
    sub->add_option("--encoder", encoder, "MLM pretraining output directory");
    sub->add_option("--decoder", decoder, "CLM pretraining output directory");
    sub->add_option("--seeds", seeds, "Seed list")->delimiter(',')->capture_default_str();
    sub->add_option("--jobs", jobs, "Parallel cells")->check(CLI::PositiveNumber)->capture_default_str();
    sub->add_option("--out", out, "Output directory");
  }

  int run(Context& ctx) {
    require_file(encoder, "--encoder");
    require_file(decoder, "--decoder");
    task.check(false);
    train.cfg.seeds = seeds;
    train.cfg.validate();
    const auto enc = checkpoint_dirs(encoder), dec = checkpoint_dirs(decoder);
    RunManifest manifest(resolve_out(out, "grid"), ctx.args, *sub, seeds, {"grid.csv"});
    const Checkpoint first = load_checkpoint(enc.front());
    if (load_checkpoint(dec.front()).vocab != first.vocab) {
      throw Error(ErrorCode::kInvalidConfig, "encoder and decoder vocabularies differ");
    }
    const SlData data = task.load();
    const Vocab vocab(first.vocab);
    GridTask grid_task;
    grid_task.name = task.task;
    grid_task.labels = data.types.empty() ? LabelSet::from_sentences(data.train) : LabelSet(data.types);
    const ChunkSplitter splitter(kPieceWidth);
    const std::size_t max_len = first.model.spec().max_len;
    grid_task.train = encode_split(data.train, splitter, vocab, grid_task.labels, max_len);
    grid_task.valid = encode_split(data.valid, splitter, vocab, grid_task.labels, max_len);
    std::vector<fs::path> enc_paths(enc.begin(), enc.end()), dec_paths(dec.begin(), dec.end());
    const auto cells = checkpoint_sweep_finetune(enc_paths, dec_paths, grid_task, train.cfg, jobs);
    const auto rows = aggregate_grid(cells);
    {
      auto f = open_out(manifest.dir() / "grid.csv");
      write_grid_csv(f, rows);
    }
    manifest.finish("ok");
    ctx.out << json{{"checkpoints", enc.size()}, {"rows", rows.size()}, {"out", manifest.dir().string()}}.dump()
            << '\n';
    return kExitOk;
  }
};

struct EvalCommand {
  std::string gold, pred, out;
  bool per_type = false;
  CLI::App* sub = nullptr;

  void add(CLI::App& app) {
    sub = app.add_subcommand("eval", "Score a predictions file against gold with span micro-F1");
    sub->add_option("--gold", gold, "Gold CoNLL file");
    sub->add_option("--pred", pred, "Predicted CoNLL file");
    sub->add_flag("--per-type", per_type, "Include per-type counts");
    sub->add_option("--out", out, "Also write report.json here");
  }

  int run(Context& ctx) {
    require_file(gold, "--gold");
    require_file(pred, "--pred");
    std::unique_ptr<RunManifest> manifest;
    if (!out.empty()) manifest = std::make_unique<RunManifest>(out, ctx.args, *sub, std::vector<std::uint64_t>{},
                                                               std::vector<std::string>{"report.json"});
    const auto g = read_tagged(gold), p = read_tagged(pred);
    if (g.size() != p.size()) {
      throw Error(ErrorCode::kLengthMismatch, std::to_string(g.size()) + " gold vs " +
                                                  std::to_string(p.size()) + " predicted sentences");
    }
    std::vector<std::vector<std::string>> gl, pl;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (g[i].words != p[i].words) {
        throw Error(ErrorCode::kLengthMismatch, "sentence " + std::to_string(i) + " has different words");
      }
      gl.push_back(g[i].labels);
      pl.push_back(p[i].labels);
    }
    const json report = report_to_json(micro_f1(gl, pl), per_type);
    if (manifest) {
      open_out(manifest->dir() / "report.json") << report.dump(2) << '\n';
      manifest->finish("ok");
    }
    ctx.out << report.dump() << '\n';
    return kExitOk;
  }
};

struct MapResponsesCommand {
  std::string responses, sentences, task, out;
  bool score = false;
  CLI::App* sub = nullptr;

  void add(CLI::App& app) {
    sub = app.add_subcommand("map-responses", "Convert generated responses to IOB2 tags");
    sub->add_option("--responses", responses, "JSONL, one {\"response\": ...} per sentence");
    sub->add_option("--sentences", sentences, "CoNLL sentences in the same order");
    sub->add_option("--task", task, "Restrict types to a task template")
        ->check(CLI::IsMember(template_tasks()));
    sub->add_flag("--score", score, "Score against the tags in --sentences");
    sub->add_option("--out", out, "Write predictions.conll here");
  }

  static std::vector<std::string> read_responses(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
    std::vector<std::string> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      json j;
      try {
        j = json::parse(line);
      } catch (const json::exception& e) {
        throw Error(ErrorCode::kParse, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
      }
      if (j.is_string()) {
        out.push_back(j.get<std::string>());
      } else if (j.is_object() && j.contains("response") && j["response"].is_string()) {
        out.push_back(j["response"].get<std::string>());
      } else {
        throw Error(ErrorCode::kParse, path.string() + ":" + std::to_string(line_no) +
                                           ": expected a string or an object with \"response\"");
      }
    }
    return out;
  }

  int run(Context& ctx) {
    require_file(responses, "--responses");
    require_file(sentences, "--sentences");
    std::unique_ptr<RunManifest> manifest;
    if (!out.empty()) manifest = std::make_unique<RunManifest>(out, ctx.args, *sub, std::vector<std::uint64_t>{},
                                                               std::vector<std::string>{"predictions.conll"});
    const auto gold = read_tagged(sentences);
    const auto resp = read_responses(responses);
    if (resp.size() != gold.size()) {
      throw Error(ErrorCode::kLengthMismatch, std::to_string(resp.size()) + " responses vs " +
                                                  std::to_string(gold.size()) + " sentences");
    }
    std::vector<std::string> types;
    if (!task.empty()) {
      for (const auto& t : task_template(task).types) types.push_back(t.tag_type);
    } else {
      types = LabelSet::from_sentences(gold).types();
    }
    std::vector<TaggedSentence> predicted;
    std::vector<std::vector<std::string>> gl, pl;
    std::size_t fallback = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) {
      std::size_t malformed = 0;
      auto items = parse_response(resp[i], &malformed);
      if (!task.empty()) {
        // Responses name types by option wording; map them back to tag types.
        for (auto& item : items) {
          for (const auto& t : task_template(task).types) {
            if (t.option == item.type) item.type = t.tag_type;
          }
        }
      }
      auto mapped = map_responses(items, gold[i].words, types, malformed);
      fallback += mapped.fallback ? 1 : 0;
      gl.push_back(gold[i].labels);
      pl.push_back(mapped.labels);
      predicted.push_back({gold[i].words, std::move(mapped.labels)});
    }
    if (manifest) {
      auto f = open_out(manifest->dir() / "predictions.conll");
      write_conll(f, predicted);
    }
    if (score) {
      EvalReport report = micro_f1(gl, pl);
      report.n_fallback = fallback;
      ctx.out << report_to_json(report, true).dump() << '\n';
    } else if (!manifest) {
      write_conll(ctx.out, predicted);
    }
    if (manifest) manifest->finish("ok");
    return kExitOk;
  }
};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app("Layer-group causal-mask removal experiments", "unmask_lab");
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "TOML/INI file; keys go in a [subcommand] section");
  app.set_version_flag("--version", UNMASK_LAB_VERSION);

  PretrainCommand pretrain_cmd;
  FinetuneCommand finetune_cmd;
  SweepCommand sweep_cmd;
  GridCommand grid_cmd;
  EvalCommand eval_cmd;
  MapResponsesCommand map_cmd;
  pretrain_cmd.add(app);
  finetune_cmd.add(app);
  sweep_cmd.add(app);
  grid_cmd.add(app);
  eval_cmd.add(app);
  map_cmd.add(app);

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  Context ctx{args, out, err};
  try {
    if (pretrain_cmd.sub->parsed()) return pretrain_cmd.run(ctx);
    if (finetune_cmd.sub->parsed()) return finetune_cmd.run(ctx);
    if (sweep_cmd.sub->parsed()) return sweep_cmd.run(ctx);
    if (grid_cmd.sub->parsed()) return grid_cmd.run(ctx);
    if (eval_cmd.sub->parsed()) return eval_cmd.run(ctx);
    if (map_cmd.sub->parsed()) return map_cmd.run(ctx);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace unmask::cli
