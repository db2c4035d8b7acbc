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

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <numbers>
#include <numeric>
#include <ostream>
#include <sstream>
#include <tuple>

#include "json.hpp"
#include "unmask/csv.h"
#include "unmask/error.h"
#include "unmask/parallel.h"
#include "unmask/stats.h"

namespace unmask {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorCode::kInvalidConfig, what);
}

template <typename T>
void check_aligned(const ParamSet<T>& params, const Gradients<T>& grads) {
  if (grads.size() != params.size()) {
    throw Error(ErrorCode::kShapeMismatch, "gradient list does not match parameter list");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].trainable && grads[i].size() != params[i].size()) {
      throw Error(ErrorCode::kShapeMismatch, "gradient for " + params[i].name + " has " +
                                                 std::to_string(grads[i].size()) + " entries");
    }
  }
}

template <typename T>
void add_into(Gradients<T>& acc, const Gradients<T>& g) {
  for (std::size_t i = 0; i < acc.size(); ++i) {
    for (std::size_t j = 0; j < acc[i].size(); ++j) acc[i][j] += g[i][j];
  }
}

template <typename T>
void scale(Gradients<T>& g, T s) {
  for (auto& v : g) {
    for (auto& x : v) x *= s;
  }
}

// Distinct deterministic streams derived from one seed.
std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

constexpr std::uint64_t kOrderStream = 1;
constexpr std::uint64_t kDropoutStream = 2;
constexpr std::uint64_t kCorruptStream = 3;
constexpr std::uint64_t kLoraStream = 4;

[[noreturn]] void non_finite(std::size_t step, std::size_t epoch, double loss, double norm) {
  std::ostringstream msg;
  msg << "non-finite value at step " << step << " (epoch " << epoch << "): loss=" << loss
      << " grad_norm=" << norm;
  throw Error(ErrorCode::kNonFiniteLoss, msg.str());
}

struct StepResult {
  double loss = 0.0;
  double grad_norm = 0.0;
};

// Sums losses and gradients over the micro-batches, divides by the total
// number of targets, clips and applies one AdamW update.
template <typename T, typename MakeBatch>
StepResult optimizer_step(Model<T>& model, AdamState<T>& state, const TrainConfig& cfg,
                          double lr, std::size_t n_micro, MakeBatch&& make_batch, Objective objective,
                          const UnmaskConfig& unmask, std::mt19937_64* dropout_rng,
                          std::size_t step, std::size_t epoch) {
  auto grads = zero_gradients(model.params());
  double loss_sum = 0.0;
  std::size_t count = 0;
  for (std::size_t k = 0; k < n_micro; ++k) {
    const LossBatch batch = make_batch(k);
    auto r = loss_sum_and_grads(model, batch, objective, unmask, dropout_rng);
    loss_sum += static_cast<double>(r.loss);
    count += r.count;
    add_into(grads, r.grads);
  }
  scale(grads, T(1) / static_cast<T>(count));
  const double loss = loss_sum / static_cast<double>(count);
  if (!std::isfinite(loss)) non_finite(step, epoch, loss, global_grad_norm(grads));
  const double norm = clip_grad_norm(grads, cfg.clip_norm);
  if (!std::isfinite(norm)) non_finite(step, epoch, loss, norm);
  adamw_step(model.params(), grads, state, cfg, lr);
  return {loss, norm};
}

}  // namespace

TrainConfig TrainConfig::pretrain_defaults() {
  TrainConfig c;
  c.accum_steps = 8;
  c.batch_size = 64;
  c.epochs = 10;
  return c;
}

void TrainConfig::validate() const {
  require(lr > 0, "lr must be positive");
  require(beta1 > 0 && beta1 < 1 && beta2 > 0 && beta2 < 1, "betas must lie in (0, 1)");
  require(eps > 0, "eps must be positive");
  require(weight_decay >= 0, "weight decay must be non-negative");
  require(clip_norm > 0, "clip norm must be positive");
  require(accum_steps > 0, "accumulation steps must be positive");
  require(batch_size > 0, "batch size must be positive");
  require(epochs > 0, "epochs must be positive");
  require(!seeds.empty(), "seed list must not be empty");
}

std::vector<std::size_t> CheckpointSchedule::save_steps(std::size_t steps_per_epoch) const {
  require(per_epoch > 0, "checkpoints per epoch must be positive");
  require(steps_per_epoch >= per_epoch,
          std::to_string(steps_per_epoch) + " steps per epoch cannot hold " +
              std::to_string(per_epoch) + " checkpoint intervals");
  std::vector<std::size_t> out;
  if (include_init) out.push_back(0);
  const std::size_t interval = steps_per_epoch / per_epoch;
  for (std::size_t e = 0; e < epochs; ++e) {
    for (std::size_t k = 1; k <= per_epoch; ++k) {
      out.push_back(e * steps_per_epoch + (k == per_epoch ? steps_per_epoch : k * interval));
    }
  }
  return out;
}

template <typename T>
void adamw_step(ParamSet<T>& params, const Gradients<T>& grads, AdamState<T>& state,
                const TrainConfig& cfg, double lr) {
  check_aligned(params, grads);
  if (state.m.empty()) {
    state.m = zero_gradients(params);
    state.v = zero_gradients(params);
  }
  check_aligned(params, state.m);
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (!p.trainable) continue;
    const double decay = p.decay ? lr * cfg.weight_decay : 0.0;
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      double w = static_cast<double>(p.value[j]);
      w -= decay * w;
      const double g = static_cast<double>(grads[i][j]);
      const double mj = cfg.beta1 * static_cast<double>(m[j]) + (1 - cfg.beta1) * g;
      const double vj = cfg.beta2 * static_cast<double>(v[j]) + (1 - cfg.beta2) * g * g;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      w -= lr * (mj / c1) / (std::sqrt(vj / c2) + cfg.eps);
      p.value[j] = static_cast<T>(w);
    }
  }
}

double cosine_lr(std::size_t step, std::size_t total_steps, double base_lr) {
  if (total_steps == 0 || step > total_steps) {
    throw Error(ErrorCode::kIndexOutOfRange, "step " + std::to_string(step) + " outside schedule of " +
                                                 std::to_string(total_steps));
  }
  const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

template <typename T>
double global_grad_norm(const Gradients<T>& grads) {
  double ss = 0.0;
  for (const auto& g : grads) {
    for (T x : g) ss += static_cast<double>(x) * static_cast<double>(x);
  }
  return std::sqrt(ss);
}

template <typename T>
double clip_grad_norm(Gradients<T>& grads, double max_norm) {
  const double norm = global_grad_norm(grads);
  if (norm > max_norm) scale(grads, static_cast<T>(max_norm / (norm + 1e-6)));
  return norm;
}

void write_step_record(std::ostream& out, const StepRecord& r) {
  const nlohmann::json j = {{"step", r.step}, {"epoch", r.epoch}, {"lr", r.lr},
                            {"loss", r.loss}, {"grad_norm", r.grad_norm}};
  out << j.dump() << '\n';
}

EncodedSplit encode_split(const std::vector<TaggedSentence>& sentences, const Splitter& splitter,
                          const Vocab& vocab, const LabelSet& labels, std::size_t max_len) {
  EncodedSplit out;
  for (const auto& s : sentences) {
    bool truncated = false;
    out.sequences.push_back(encode_sl(s, splitter, vocab, labels, max_len, &truncated));
    const std::size_t kept = out.sequences.back().first_index.size();
    out.gold.emplace_back(s.labels.begin(), s.labels.begin() + static_cast<std::ptrdiff_t>(kept));
    if (truncated) ++out.truncated;
  }
  return out;
}

template <typename T>
SlResult<T> train_sl(Model<T> model, const EncodedSplit& train, const TrainConfig& cfg,
                     const SlOptions& opts) {
  cfg.validate();
  if (model.spec().n_labels == 0) throw Error(ErrorCode::kMissingHead, "model has no SL head");
  if (train.sequences.empty()) throw Error(ErrorCode::kInvalidConfig, "empty training split");
  if (opts.use_lora) {
    apply_lora(model, opts.lora, stream_seed(opts.seed, kLoraStream));
  } else {
    set_all_trainable(model, true);
  }

  std::mt19937_64 order_rng(stream_seed(opts.seed, kOrderStream));
  std::mt19937_64 dropout_rng(stream_seed(opts.seed, kDropoutStream));
  const std::size_t n = train.sequences.size();
  const std::size_t per_step = cfg.batch_size * cfg.accum_steps;
  const std::size_t steps_per_epoch = (n + per_step - 1) / per_step;
  const std::size_t total = steps_per_epoch * cfg.epochs;

  SlResult<T> result;
  AdamState<T> state;
  std::vector<std::size_t> order(n);
  std::vector<SlSequence> group;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), order_rng);
    double epoch_loss = 0.0;
    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      const std::size_t begin = s * per_step;
      const std::size_t end = std::min(n, begin + per_step);
      const std::size_t n_micro = (end - begin + cfg.batch_size - 1) / cfg.batch_size;
      auto make_batch = [&](std::size_t k) {
        const std::size_t b0 = begin + k * cfg.batch_size;
        const std::size_t b1 = std::min(end, b0 + cfg.batch_size);
        group.clear();
        for (std::size_t i = b0; i < b1; ++i) group.push_back(train.sequences[order[i]]);
        return make_sl_batch(group, opts.pad_id);
      };
      const double lr = cosine_lr(result.steps, total, cfg.lr);
      const auto r = optimizer_step(model, state, cfg, lr, n_micro, make_batch, Objective::kSl,
                                    opts.unmask, &dropout_rng, result.steps, epoch);
      epoch_loss += r.loss;
      ++result.steps;
      if (opts.log) write_step_record(*opts.log, {result.steps, epoch, lr, r.loss, r.grad_norm});
    }
    result.epoch_loss.push_back(epoch_loss / static_cast<double>(steps_per_epoch));
  }
  result.model = std::move(model);
  return result;
}

std::vector<std::vector<std::string>> predict_sl(const Model<float>& model, const EncodedSplit& split,
                                                 const LabelSet& labels, const UnmaskConfig& unmask,
                                                 int pad_id, std::size_t batch_size) {
  std::vector<std::vector<std::string>> out;
  out.reserve(split.sequences.size());
  for (std::size_t b0 = 0; b0 < split.sequences.size(); b0 += batch_size) {
    const std::size_t b1 = std::min(split.sequences.size(), b0 + batch_size);
    std::vector<std::span<const int>> views;
    for (std::size_t i = b0; i < b1; ++i) views.emplace_back(split.sequences[i].ids);
    const TokenBatch tb = pad_batch(views, pad_id);
    const auto logits = sl_logits(model, forward(model, tb, unmask));
    for (std::size_t i = b0; i < b1; ++i) {
      std::vector<std::size_t> rows;
      for (std::size_t f : split.sequences[i].first_index) rows.push_back((i - b0) * tb.length + f);
      std::vector<std::string> tags;
      for (int id : select_first_token_predictions(logits, rows)) tags.push_back(labels.tag(id));
      out.push_back(std::move(tags));
    }
  }
  return out;
}

EvalReport evaluate_sl(const Model<float>& model, const EncodedSplit& split, const LabelSet& labels,
                       const UnmaskConfig& unmask, int pad_id) {
  return micro_f1(split.gold, predict_sl(model, split, labels, unmask, pad_id));
}

std::size_t pretrain(Model<float>& model, const std::vector<std::vector<int>>& blocks,
                     const Vocab& vocab, const TrainConfig& cfg, const PretrainOptions& opts) {
  cfg.validate();
  if (opts.objective == Objective::kSl) {
    throw Error(ErrorCode::kInvalidConfig, "pretraining objective must be clm or mlm");
  }
  if (!model.spec().lm_head) throw Error(ErrorCode::kMissingHead, "model has no LM head");
  if (blocks.empty()) throw Error(ErrorCode::kInvalidConfig, "no pretraining blocks");
  if (opts.objective == Objective::kMlm && !(opts.mlm_prob > 0.0 && opts.mlm_prob <= 1.0)) {
    throw Error(ErrorCode::kInvalidConfig, "MLM probability must lie in (0, 1]");
  }
  set_all_trainable(model, true);
  const std::size_t n_blocks = model.spec().n_blocks;
  const UnmaskConfig unmask = opts.objective == Objective::kClm
                                  ? UnmaskConfig::all_masked(1, n_blocks)
                                  : UnmaskConfig::all_unmasked(1, n_blocks);

  const std::size_t n = blocks.size();
  const std::size_t per_step = cfg.batch_size * cfg.accum_steps;
  const std::size_t steps_per_epoch = (n + per_step - 1) / per_step;
  CheckpointSchedule schedule = opts.schedule;
  schedule.epochs = cfg.epochs;
  const auto save_at = schedule.save_steps(steps_per_epoch);
  const std::size_t total = steps_per_epoch * cfg.epochs;
  const std::string objective(objective_name(opts.objective));

  std::mt19937_64 order_rng(stream_seed(opts.seed, kOrderStream));
  std::mt19937_64 dropout_rng(stream_seed(opts.seed, kDropoutStream));
  std::mt19937_64 corrupt_rng(stream_seed(opts.seed, kCorruptStream));
  std::size_t next_save = 0;
  auto maybe_save = [&](std::size_t step, std::size_t epoch) {
    while (next_save < save_at.size() && save_at[next_save] == step) {
      if (opts.on_checkpoint) opts.on_checkpoint(next_save, model, {objective, step, epoch, opts.seed});
      ++next_save;
    }
  };

  AdamState<float> state;
  std::vector<std::size_t> order(n);
  std::size_t step = 0;
  maybe_save(0, 0);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), order_rng);
    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      const std::size_t begin = s * per_step;
      const std::size_t end = std::min(n, begin + per_step);
      const std::size_t n_micro = (end - begin + cfg.batch_size - 1) / cfg.batch_size;
      auto make_batch = [&](std::size_t k) {
        const std::size_t b0 = begin + k * cfg.batch_size;
        const std::size_t b1 = std::min(end, b0 + cfg.batch_size);
        if (opts.objective == Objective::kClm) {
          std::vector<std::vector<int>> group;
          for (std::size_t i = b0; i < b1; ++i) group.push_back(blocks[order[i]]);
          return make_clm_batch(group, opts.pad_id);
        }
        std::vector<MlmSample> group;
        for (std::size_t i = b0; i < b1; ++i) {
          for (;;) {
            try {
              group.push_back(mlm_corrupt(blocks[order[i]], opts.mlm_prob, vocab, corrupt_rng));
              break;
            } catch (const Error& e) {
              if (e.code() != ErrorCode::kNothingSelected) throw;
            }
          }
        }
        return make_mlm_batch(group, opts.pad_id);
      };
      const double lr = cosine_lr(step, total, cfg.lr);
      const auto r = optimizer_step(model, state, cfg, lr, n_micro, make_batch, opts.objective,
                                    unmask, &dropout_rng, step, epoch);
      ++step;
      if (opts.log) write_step_record(*opts.log, {step, epoch, lr, r.loss, r.grad_norm});
      maybe_save(step, epoch + 1);
    }
  }
  return next_save;
}

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::kEncoder: return "encoder";
    case Variant::kDecoder: return "decoder";
    case Variant::kDecoderUnmask: return "decoder-unmask";
  }
  return "";
}

std::vector<GridCell> checkpoint_sweep_finetune(const std::vector<std::filesystem::path>& encoder,
                                                const std::vector<std::filesystem::path>& decoder,
                                                const GridTask& task, const TrainConfig& cfg,
                                                std::size_t jobs) {
  cfg.validate();
  if (encoder.size() != decoder.size() || encoder.empty()) {
    throw Error(ErrorCode::kIncompleteGrid, std::to_string(encoder.size()) + " encoder vs " +
                                                std::to_string(decoder.size()) + " decoder checkpoints");
  }
  const std::size_t n_variants = std::size(kAllVariants);
  const std::size_t n_seeds = cfg.seeds.size();
  const std::size_t n_cells = encoder.size() * n_variants * n_seeds;
  std::vector<GridCell> cells(n_cells);
  parallel_for(n_cells, jobs, [&](std::size_t idx) {
    const std::size_t ck = idx / (n_variants * n_seeds);
    const Variant variant = kAllVariants[(idx / n_seeds) % n_variants];
    const std::uint64_t seed = cfg.seeds[idx % n_seeds];
    Checkpoint source = load_checkpoint(variant == Variant::kEncoder ? encoder[ck] : decoder[ck]);
    Model<float> model = std::move(source.model);
    const Vocab vocab(source.vocab);
    attach_sl_head(model, task.labels.size(), seed);
    const std::size_t nb = model.spec().n_blocks;
    const UnmaskConfig unmask = variant == Variant::kDecoder ? UnmaskConfig::all_masked(1, nb)
                                                             : UnmaskConfig::all_unmasked(1, nb);
    SlOptions opts;
    opts.unmask = unmask;
    opts.seed = seed;
    opts.pad_id = vocab.pad_id();
    auto run = train_sl(std::move(model), task.train, cfg, opts);
    const double f1 = evaluate_sl(run.model, task.valid, task.labels, unmask, opts.pad_id).micro_f1;
    cells[idx] = {task.name, ck, variant, seed, "validation", f1};
  });
  return cells;
}

std::vector<GridRow> aggregate_grid(const std::vector<GridCell>& cells) {
  std::map<std::tuple<std::string, std::size_t, int, std::string>, std::vector<double>> groups;
  for (const auto& c : cells) {
    groups[{c.task, c.checkpoint, static_cast<int>(c.variant), c.split}].push_back(c.value);
  }
  std::vector<GridRow> rows;
  for (const auto& [key, values] : groups) {
    const auto ms = mean_std(values);
    rows.push_back({std::get<0>(key), std::get<1>(key),
                    std::string(variant_name(static_cast<Variant>(std::get<2>(key)))),
                    std::get<3>(key), ms.mean, ms.std, values.size()});
  }
  return rows;
}

constexpr std::string_view kGridHeader = "task,checkpoint,variant,split,mean,std,n_seeds";

void write_grid_csv(std::ostream& out, const std::vector<GridRow>& rows) {
  out << kGridHeader << '\n';
  for (const auto& r : rows) {
    out << csv::field(r.task) << ',' << r.checkpoint << ',' << csv::field(r.variant) << ','
        << csv::field(r.split) << ',' << csv::format_double(r.mean) << ','
        << csv::format_double(r.std) << ',' << r.n_seeds << '\n';
  }
}

std::vector<GridRow> read_grid_csv(std::istream& in) {
  std::vector<GridRow> rows;
  for (const auto& f : csv::read_rows(in, kGridHeader)) {
    rows.push_back({f[0], csv::parse_size(f[1]), f[2], f[3], csv::parse_double(f[4]),
                    csv::parse_double(f[5]), csv::parse_size(f[6])});
  }
  return rows;
}

#define UNMASK_INSTANTIATE_TRAIN(T)                                                              \
  template void adamw_step<T>(ParamSet<T>&, const Gradients<T>&, AdamState<T>&,                 \
                              const TrainConfig&, double);                                       \
  template double global_grad_norm<T>(const Gradients<T>&);                                      \
  template double clip_grad_norm<T>(Gradients<T>&, double);                                      \
  template SlResult<T> train_sl<T>(Model<T>, const EncodedSplit&, const TrainConfig&,           \
                                   const SlOptions&);

UNMASK_INSTANTIATE_TRAIN(float)
UNMASK_INSTANTIATE_TRAIN(double)

}  // namespace unmask
