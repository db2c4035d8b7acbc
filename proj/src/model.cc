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

#include "unmask/model.h"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "unmask/error.h"

namespace unmask {

std::string_view objective_name(Objective objective) {
  switch (objective) {
    case Objective::kClm: return "clm";
    case Objective::kMlm: return "mlm";
    case Objective::kSl: return "sl";
  }
  return "unknown";
}

Objective parse_objective(std::string_view name) {
  if (name == "clm") return Objective::kClm;
  if (name == "mlm") return Objective::kMlm;
  if (name == "sl") return Objective::kSl;
  throw Error(ErrorCode::kInvalidConfig, "unknown objective " + std::string(name));
}

void ModelSpec::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::kInvalidSpec, what); };
  if (n_blocks == 0) fail("n_blocks must be positive");
  if (d_model == 0 || n_heads == 0) fail("d_model and n_heads must be positive");
  if (d_model % n_heads != 0) fail("d_model must be divisible by n_heads");
  if (d_ff == 0 || vocab_size == 0 || max_len == 0) fail("d_ff, vocab_size, max_len must be positive");
  if (dropout < 0.0 || dropout >= 1.0) fail("dropout must be in [0, 1)");
}

std::string block_param(std::size_t block, std::string_view leaf) {
  return "blocks." + std::to_string(block) + "." + std::string(leaf);
}

namespace {

constexpr const char* kBlockLeaves[] = {
    "ln1.gamma", "ln1.beta", "attn.q.w", "attn.q.b", "attn.k.w", "attn.k.b",
    "attn.v.w",  "attn.v.b", "attn.o.w", "attn.o.b", "ln2.gamma", "ln2.beta",
    "ffn.up.w",  "ffn.up.b", "ffn.down.w", "ffn.down.b"};

std::vector<std::size_t> leaf_shape(const ModelSpec& s, std::string_view leaf) {
  if (leaf.ends_with("gamma") || leaf.ends_with("beta")) return {s.d_model};
  if (leaf == "ffn.up.w") return {s.d_model, s.d_ff};
  if (leaf == "ffn.up.b") return {s.d_ff};
  if (leaf == "ffn.down.w") return {s.d_ff, s.d_model};
  if (leaf.ends_with(".w")) return {s.d_model, s.d_model};
  return {s.d_model};
}

bool is_decayed(std::string_view leaf) { return leaf.ends_with(".w"); }

}  // namespace

std::vector<std::string> parameter_names(const ModelSpec& spec,
                                         const std::optional<LoraSpec>& lora) {
  std::vector<std::string> names{"tok_emb", "pos_emb"};
  for (std::size_t b = 0; b < spec.n_blocks; ++b) {
    for (const char* leaf : kBlockLeaves) names.push_back(block_param(b, leaf));
  }
  names.push_back("final_ln.gamma");
  names.push_back("final_ln.beta");
  if (spec.lm_head) {
    names.push_back("lm_head.w");
    names.push_back("lm_head.b");
  }
  if (spec.n_labels > 0) {
    names.push_back("sl_head.w");
    names.push_back("sl_head.b");
  }
  if (lora) {
    for (std::size_t b = 0; b < spec.n_blocks; ++b) {
      for (const char* leaf : {"attn.q.lora_a", "attn.q.lora_b", "attn.v.lora_a", "attn.v.lora_b"}) {
        names.push_back(block_param(b, leaf));
      }
    }
  }
  return names;
}

std::vector<std::size_t> parameter_shape(const ModelSpec& spec, const std::optional<LoraSpec>& lora,
                                         std::string_view name) {
  if (name == "tok_emb") return {spec.vocab_size, spec.d_model};
  if (name == "pos_emb") return {spec.max_len, spec.d_model};
  if (name == "final_ln.gamma" || name == "final_ln.beta") return {spec.d_model};
  if (name == "lm_head.w") return {spec.d_model, spec.vocab_size};
  if (name == "lm_head.b") return {spec.vocab_size};
  if (name == "sl_head.w") return {spec.d_model, spec.n_labels};
  if (name == "sl_head.b") return {spec.n_labels};
  if (name.starts_with("blocks.")) {
    const auto dot = name.find('.', 7);
    const std::string_view leaf = name.substr(dot + 1);
    if (leaf.ends_with("lora_a") && lora) return {spec.d_model, lora->rank};
    if (leaf.ends_with("lora_b") && lora) return {lora->rank, spec.d_model};
    return leaf_shape(spec, leaf);
  }
  throw Error(ErrorCode::kTargetNotFound, "no parameter named " + std::string(name));
}

template <typename T>
Model<T>::Model(ModelSpec spec, ParamSet<T> params, std::optional<LoraSpec> lora)
    : spec_(spec), params_(std::move(params)), lora_(std::move(lora)) {
  spec_.validate();
  const auto expected = parameter_names(spec_, lora_);
  if (expected.size() != params_.size()) {
    throw Error(ErrorCode::kManifestMismatch,
                "expected " + std::to_string(expected.size()) + " tensors, got " +
                    std::to_string(params_.size()));
  }
  for (const auto& name : expected) {
    if (!params_.contains(name)) {
      throw Error(ErrorCode::kManifestMismatch, "missing tensor " + name);
    }
    const auto& p = params_.at(name);
    if (p.shape != parameter_shape(spec_, lora_, name) || p.value.size() != shape_size(p.shape)) {
      throw Error(ErrorCode::kManifestMismatch, "tensor " + name + " has the wrong shape");
    }
  }
}

template <typename T>
Model<T> Model<T>::initialize(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 0.02);
  auto fill_normal = [&](Param<T>& p) {
    for (auto& v : p.value) v = static_cast<T>(normal(rng));
  };

  ParamSet<T> params;
  fill_normal(params.add("tok_emb", {spec.vocab_size, spec.d_model}, true));
  fill_normal(params.add("pos_emb", {spec.max_len, spec.d_model}, true));
  for (std::size_t b = 0; b < spec.n_blocks; ++b) {
    for (const char* leaf : kBlockLeaves) {
      std::string_view l(leaf);
      auto& p = params.add(block_param(b, l), leaf_shape(spec, l), is_decayed(l));
      if (l.ends_with("gamma")) {
        std::fill(p.value.begin(), p.value.end(), T(1));
      } else if (l.ends_with(".w")) {
        fill_normal(p);
      }
    }
  }
  std::fill_n(params.add("final_ln.gamma", {spec.d_model}, false).value.begin(), spec.d_model, T(1));
  params.add("final_ln.beta", {spec.d_model}, false);
  if (spec.lm_head) {
    fill_normal(params.add("lm_head.w", {spec.d_model, spec.vocab_size}, true));
    params.add("lm_head.b", {spec.vocab_size}, false);
  }
  if (spec.n_labels > 0) {
    fill_normal(params.add("sl_head.w", {spec.d_model, spec.n_labels}, true));
    params.add("sl_head.b", {spec.n_labels}, false);
  }
  return Model<T>(spec, std::move(params));
}

namespace {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<Mat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const Mat<T>>;
template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;
template <typename T>
using CMapRow = Eigen::Map<const RowVec<T>>;
template <typename T>
using MapRow = Eigen::Map<RowVec<T>>;

constexpr std::size_t kNone = static_cast<std::size_t>(-1);

struct BlockIndex {
  std::size_t ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
  std::size_t qa = kNone, qb = kNone, va = kNone, vb = kNone;
};

struct Layout {
  std::size_t tok, pos, lnf_g, lnf_b;
  std::size_t lm_w = kNone, lm_b = kNone, sl_w = kNone, sl_b = kNone;
  std::vector<BlockIndex> blocks;
};

template <typename T>
Layout resolve(const Model<T>& model) {
  const auto& ps = model.params();
  Layout l;
  l.tok = ps.index_of("tok_emb");
  l.pos = ps.index_of("pos_emb");
  l.lnf_g = ps.index_of("final_ln.gamma");
  l.lnf_b = ps.index_of("final_ln.beta");
  if (ps.contains("lm_head.w")) {
    l.lm_w = ps.index_of("lm_head.w");
    l.lm_b = ps.index_of("lm_head.b");
  }
  if (ps.contains("sl_head.w")) {
    l.sl_w = ps.index_of("sl_head.w");
    l.sl_b = ps.index_of("sl_head.b");
  }
  for (std::size_t b = 0; b < model.spec().n_blocks; ++b) {
    auto ix = [&](std::string_view leaf) { return ps.index_of(block_param(b, leaf)); };
    BlockIndex bi{ix("ln1.gamma"), ix("ln1.beta"), ix("attn.q.w"), ix("attn.q.b"),
                  ix("attn.k.w"),  ix("attn.k.b"), ix("attn.v.w"), ix("attn.v.b"),
                  ix("attn.o.w"),  ix("attn.o.b"), ix("ln2.gamma"), ix("ln2.beta"),
                  ix("ffn.up.w"),  ix("ffn.up.b"), ix("ffn.down.w"), ix("ffn.down.b")};
    if (model.lora()) {
      bi.qa = ix("attn.q.lora_a");
      bi.qb = ix("attn.q.lora_b");
      bi.va = ix("attn.v.lora_a");
      bi.vb = ix("attn.v.lora_b");
    }
    l.blocks.push_back(bi);
  }
  return l;
}

template <typename T>
CMapMat<T> as_mat(const Param<T>& p) {
  return CMapMat<T>(p.value.data(), static_cast<Eigen::Index>(p.shape[0]),
                    static_cast<Eigen::Index>(p.shape[1]));
}

template <typename T>
CMapRow<T> as_row(const Param<T>& p) {
  return CMapRow<T>(p.value.data(), static_cast<Eigen::Index>(p.size()));
}

// Null when the parameter is frozen.
template <typename T>
T* grad_ptr(Gradients<T>& g, std::size_t idx) {
  return g[idx].empty() ? nullptr : g[idx].data();
}

template <typename T>
Mat<T> dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, std::mt19937_64* rng) {
  if (rng == nullptr || p <= 0.0) return Mat<T>();
  std::bernoulli_distribution keep(1.0 - p);
  const T scale = static_cast<T>(1.0 / (1.0 - p));
  Mat<T> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = keep(*rng) ? scale : T(0);
  return m;
}

template <typename T>
void apply_mask(Mat<T>& x, const Mat<T>& mask) {
  if (mask.size() != 0) x.array() *= mask.array();
}

template <typename T>
struct NormTrace {
  Mat<T> xhat;
  RowVec<T> rstd;
};

template <typename T>
Mat<T> layer_norm(const Mat<T>& x, const Param<T>& gamma, const Param<T>& beta, double eps,
                  NormTrace<T>& tr) {
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  tr.xhat.resize(n, d);
  tr.rstd.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const T mean = x.row(i).mean();
    const T var = (x.row(i).array() - mean).square().mean();
    const T rstd = T(1) / std::sqrt(var + static_cast<T>(eps));
    tr.rstd(i) = rstd;
    tr.xhat.row(i) = (x.row(i).array() - mean) * rstd;
  }
  Mat<T> y = tr.xhat;
  y.array().rowwise() *= as_row(gamma).array();
  y.rowwise() += as_row(beta);
  return y;
}

template <typename T>
Mat<T> layer_norm_backward(const Mat<T>& dy, const Param<T>& gamma, const NormTrace<T>& tr,
                           T* dgamma, T* dbeta) {
  const Eigen::Index d = dy.cols();
  if (dgamma) {
    MapRow<T>(dgamma, d) += (dy.array() * tr.xhat.array()).colwise().sum().matrix();
  }
  if (dbeta) MapRow<T>(dbeta, d) += dy.colwise().sum();
  Mat<T> dxhat = dy;
  dxhat.array().rowwise() *= as_row(gamma).array();
  Mat<T> dx(dy.rows(), d);
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const T m1 = dxhat.row(i).mean();
    const T m2 = (dxhat.row(i).array() * tr.xhat.row(i).array()).mean();
    dx.row(i) = (dxhat.row(i).array() - m1 - tr.xhat.row(i).array() * m2) * tr.rstd(i);
  }
  return dx;
}

template <typename T>
Mat<T> linear(const Mat<T>& x, const Param<T>& w, const Param<T>& b) {
  Mat<T> y;
  y.noalias() = x * as_mat(w);
  y.rowwise() += as_row(b);
  return y;
}

// Accumulates weight/bias gradients and returns dx.
template <typename T>
Mat<T> linear_backward(const Mat<T>& x, const Mat<T>& dy, const Param<T>& w, T* dw, T* db) {
  if (dw) {
    MapMat<T>(dw, static_cast<Eigen::Index>(w.shape[0]), static_cast<Eigen::Index>(w.shape[1]))
        .noalias() += x.transpose() * dy;
  }
  if (db) MapRow<T>(db, dy.cols()) += dy.colwise().sum();
  Mat<T> dx;
  dx.noalias() = dy * as_mat(w).transpose();
  return dx;
}

template <typename T>
T gelu(T u) {
  return T(0.5) * u * (T(1) + std::erf(u * T(std::numbers::sqrt2 / 2)));
}

template <typename T>
T gelu_grad(T u) {
  const T cdf = T(0.5) * (T(1) + std::erf(u * T(std::numbers::sqrt2 / 2)));
  const T pdf = std::exp(T(-0.5) * u * u) * T(std::numbers::inv_sqrtpi / std::numbers::sqrt2);
  return cdf + u * pdf;
}

template <typename T>
struct LoraTrace {
  Mat<T> input_mask;  // dropout on the adapter input
  Mat<T> low;         // dropout(a) * A, [N, r]
};

template <typename T>
struct BlockTrace {
  MaskKind kind = MaskKind::kCausal;
  Mat<T> h_in;
  NormTrace<T> ln1;
  Mat<T> a;
  Mat<T> q, k, v;
  LoraTrace<T> lora_q, lora_v;
  std::vector<Mat<T>> probs;  // [batch * heads] of [L, L]
  Mat<T> o;
  Mat<T> attn_drop;
  Mat<T> h_mid;
  NormTrace<T> ln2;
  Mat<T> c;
  Mat<T> u;
  Mat<T> g;
  Mat<T> ffn_drop;
};

template <typename T>
struct Trace {
  std::size_t batch = 0, length = 0;
  Mat<T> emb_drop;
  std::vector<BlockTrace<T>> blocks;
  NormTrace<T> lnf;
  Mat<T> hidden;
};

template <typename T>
class Engine {
 public:
  explicit Engine(const Model<T>& model) : model_(model), spec_(model.spec()), layout_(resolve(model)) {}

  void forward(const TokenBatch& batch, const UnmaskConfig& cfg, std::mt19937_64* rng,
               Trace<T>& tr) const;

  void backward(const TokenBatch& batch, Trace<T>& tr, const Mat<T>& d_hidden,
                Gradients<T>& grads) const;

  const Layout& layout() const { return layout_; }

 private:
  const Param<T>& p(std::size_t i) const { return model_.params()[i]; }

  Mat<T> lora_forward(const Mat<T>& a, std::size_t ia, std::size_t ib, std::mt19937_64* rng,
                      LoraTrace<T>& lt) const;

  const Model<T>& model_;
  const ModelSpec& spec_;
  Layout layout_;
};

void validate_batch(const ModelSpec& spec, const TokenBatch& batch) {
  if (batch.length > spec.max_len) {
    throw Error(ErrorCode::kSequenceTooLong, "length " + std::to_string(batch.length) +
                                                 " exceeds max_len " + std::to_string(spec.max_len));
  }
  if (batch.batch == 0 || batch.length == 0 || batch.ids.size() != batch.batch * batch.length ||
      batch.valid_lens.size() != batch.batch) {
    throw Error(ErrorCode::kShapeMismatch, "malformed token batch");
  }
  for (int id : batch.ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= spec.vocab_size) {
      throw Error(ErrorCode::kVocabOverflow, "token id " + std::to_string(id) +
                                                 " outside vocabulary of " +
                                                 std::to_string(spec.vocab_size));
    }
  }
}

template <typename T>
Mat<T> Engine<T>::lora_forward(const Mat<T>& a, std::size_t ia, std::size_t ib,
                               std::mt19937_64* rng, LoraTrace<T>& lt) const {
  const auto& lora = *model_.lora();
  lt.input_mask = dropout_mask<T>(a.rows(), a.cols(), lora.dropout, rng);
  Mat<T> ad = a;
  apply_mask(ad, lt.input_mask);
  lt.low.noalias() = ad * as_mat(p(ia));
  Mat<T> delta;
  delta.noalias() = lt.low * as_mat(p(ib));
  delta *= static_cast<T>(lora.scale());
  return delta;
}

template <typename T>
void Engine<T>::forward(const TokenBatch& batch, const UnmaskConfig& cfg, std::mt19937_64* rng,
                        Trace<T>& tr) const {
  validate_batch(spec_, batch);
  if (cfg.block_count() != spec_.n_blocks) {
    throw Error(ErrorCode::kIndivisibleBlockCount,
                "unmask config covers " + std::to_string(cfg.block_count()) + " blocks, model has " +
                    std::to_string(spec_.n_blocks));
  }
  const std::size_t B = batch.batch, L = batch.length, D = spec_.d_model;
  const std::size_t H = spec_.n_heads, dh = spec_.d_head();
  const auto N = static_cast<Eigen::Index>(B * L);
  const double pdrop = spec_.dropout;
  tr.batch = B;
  tr.length = L;

  Mat<T> h(N, static_cast<Eigen::Index>(D));
  {
    const auto tok = as_mat(p(layout_.tok));
    const auto pos = as_mat(p(layout_.pos));
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t t = 0; t < L; ++t) {
        const auto r = static_cast<Eigen::Index>(b * L + t);
        h.row(r) = tok.row(batch.at(b, t)) + pos.row(static_cast<Eigen::Index>(t));
      }
    }
  }
  tr.emb_drop = dropout_mask<T>(h.rows(), h.cols(), pdrop, rng);
  apply_mask(h, tr.emb_drop);

  // Masks are shared by all blocks of the same kind.
  std::vector<std::vector<T>> causal(B), full(B);
  auto masks_for = [&](MaskKind kind) -> std::vector<std::vector<T>>& {
    auto& cache = kind == MaskKind::kCausal ? causal : full;
    if (cache[0].empty()) {
      for (std::size_t b = 0; b < B; ++b) cache[b] = build_mask<T>(kind, L, batch.valid_lens[b]);
    }
    return cache;
  };

  const T inv_sqrt_dk = T(1) / std::sqrt(static_cast<T>(dh));
  const auto Li = static_cast<Eigen::Index>(L);
  const auto dhi = static_cast<Eigen::Index>(dh);

  tr.blocks.assign(spec_.n_blocks, BlockTrace<T>{});
  for (std::size_t bi = 0; bi < spec_.n_blocks; ++bi) {
    const BlockIndex& ix = layout_.blocks[bi];
    BlockTrace<T>& bt = tr.blocks[bi];
    bt.kind = cfg.block_kind(bi);
    const auto& masks = masks_for(bt.kind);

    bt.h_in = h;
    bt.a = layer_norm(h, p(ix.ln1_g), p(ix.ln1_b), spec_.norm_eps, bt.ln1);
    bt.q = linear(bt.a, p(ix.wq), p(ix.bq));
    bt.k = linear(bt.a, p(ix.wk), p(ix.bk));
    bt.v = linear(bt.a, p(ix.wv), p(ix.bv));
    if (model_.lora()) {
      bt.q += lora_forward(bt.a, ix.qa, ix.qb, rng, bt.lora_q);
      bt.v += lora_forward(bt.a, ix.va, ix.vb, rng, bt.lora_v);
    }

    bt.o.resize(N, static_cast<Eigen::Index>(D));
    bt.probs.resize(B * H);
    for (std::size_t b = 0; b < B; ++b) {
      const auto r0 = static_cast<Eigen::Index>(b * L);
      CMapMat<T> mask(masks[b].data(), Li, Li);
      for (std::size_t hh = 0; hh < H; ++hh) {
        const auto c0 = static_cast<Eigen::Index>(hh * dh);
        Mat<T>& P = bt.probs[b * H + hh];
        P.noalias() = bt.q.block(r0, c0, Li, dhi) * bt.k.block(r0, c0, Li, dhi).transpose();
        P += mask;
        P *= inv_sqrt_dk;
        for (Eigen::Index i = 0; i < Li; ++i) {
          const T mx = P.row(i).maxCoeff();
          P.row(i) = (P.row(i).array() - mx).exp();
          // Masked entries are set to exactly zero rather than exp's smallest output.
          P.row(i) = (mask.row(i).array() == T(0)).select(P.row(i).array(), T(0));
          P.row(i) /= P.row(i).sum();
        }
        bt.o.block(r0, c0, Li, dhi).noalias() = P * bt.v.block(r0, c0, Li, dhi);
      }
    }

    Mat<T> attn = linear(bt.o, p(ix.wo), p(ix.bo));
    bt.attn_drop = dropout_mask<T>(attn.rows(), attn.cols(), pdrop, rng);
    apply_mask(attn, bt.attn_drop);
    bt.h_mid = h + attn;

    bt.c = layer_norm(bt.h_mid, p(ix.ln2_g), p(ix.ln2_b), spec_.norm_eps, bt.ln2);
    bt.u = linear(bt.c, p(ix.w1), p(ix.b1));
    bt.g = bt.u.unaryExpr([](T x) { return gelu(x); });
    Mat<T> f = linear(bt.g, p(ix.w2), p(ix.b2));
    bt.ffn_drop = dropout_mask<T>(f.rows(), f.cols(), pdrop, rng);
    apply_mask(f, bt.ffn_drop);
    h = bt.h_mid + f;
  }
  tr.hidden = layer_norm(h, p(layout_.lnf_g), p(layout_.lnf_b), spec_.norm_eps, tr.lnf);
}

template <typename T>
void Engine<T>::backward(const TokenBatch& batch, Trace<T>& tr, const Mat<T>& d_hidden,
                         Gradients<T>& grads) const {
  const std::size_t B = tr.batch, L = tr.length;
  const std::size_t H = spec_.n_heads, dh = spec_.d_head();
  const T inv_sqrt_dk = T(1) / std::sqrt(static_cast<T>(dh));
  const auto Li = static_cast<Eigen::Index>(L);
  const auto dhi = static_cast<Eigen::Index>(dh);

  Mat<T> dh_ = layer_norm_backward(d_hidden, p(layout_.lnf_g), tr.lnf,
                                   grad_ptr(grads, layout_.lnf_g), grad_ptr(grads, layout_.lnf_b));

  for (std::size_t bi = spec_.n_blocks; bi-- > 0;) {
    const BlockIndex& ix = layout_.blocks[bi];
    BlockTrace<T>& bt = tr.blocks[bi];

    // h_out = h_mid + drop(ffn(LN2(h_mid)))
    Mat<T> df = dh_;
    apply_mask(df, bt.ffn_drop);
    Mat<T> dg = linear_backward(bt.g, df, p(ix.w2), grad_ptr(grads, ix.w2), grad_ptr(grads, ix.b2));
    dg.array() *= bt.u.unaryExpr([](T x) { return gelu_grad(x); }).array();
    Mat<T> dc = linear_backward(bt.c, dg, p(ix.w1), grad_ptr(grads, ix.w1), grad_ptr(grads, ix.b1));
    Mat<T> dmid = dh_ + layer_norm_backward(dc, p(ix.ln2_g), bt.ln2, grad_ptr(grads, ix.ln2_g),
                                            grad_ptr(grads, ix.ln2_b));

    // h_mid = h_in + drop(attn(LN1(h_in)))
    Mat<T> dattn = dmid;
    apply_mask(dattn, bt.attn_drop);
    Mat<T> d_o = linear_backward(bt.o, dattn, p(ix.wo), grad_ptr(grads, ix.wo), grad_ptr(grads, ix.bo));

    Mat<T> dq = Mat<T>::Zero(bt.q.rows(), bt.q.cols());
    Mat<T> dk = Mat<T>::Zero(bt.k.rows(), bt.k.cols());
    Mat<T> dv = Mat<T>::Zero(bt.v.rows(), bt.v.cols());
    for (std::size_t b = 0; b < B; ++b) {
      const auto r0 = static_cast<Eigen::Index>(b * L);
      for (std::size_t hh = 0; hh < H; ++hh) {
        const auto c0 = static_cast<Eigen::Index>(hh * dh);
        const Mat<T>& P = bt.probs[b * H + hh];
        auto dO = d_o.block(r0, c0, Li, dhi);
        Mat<T> dP;
        dP.noalias() = dO * bt.v.block(r0, c0, Li, dhi).transpose();
        dv.block(r0, c0, Li, dhi).noalias() += P.transpose() * dO;
        Mat<T> dS = P;
        for (Eigen::Index i = 0; i < Li; ++i) {
          const T dot = (dP.row(i).array() * P.row(i).array()).sum();
          dS.row(i).array() *= (dP.row(i).array() - dot);
        }
        dS *= inv_sqrt_dk;
        dq.block(r0, c0, Li, dhi).noalias() += dS * bt.k.block(r0, c0, Li, dhi);
        dk.block(r0, c0, Li, dhi).noalias() += dS.transpose() * bt.q.block(r0, c0, Li, dhi);
      }
    }

    Mat<T> da = linear_backward(bt.a, dq, p(ix.wq), grad_ptr(grads, ix.wq), grad_ptr(grads, ix.bq));
    da += linear_backward(bt.a, dk, p(ix.wk), grad_ptr(grads, ix.wk), grad_ptr(grads, ix.bk));
    da += linear_backward(bt.a, dv, p(ix.wv), grad_ptr(grads, ix.wv), grad_ptr(grads, ix.bv));
    if (model_.lora()) {
      const T scale = static_cast<T>(model_.lora()->scale());
      auto lora_back = [&](const Mat<T>& dy, std::size_t ia, std::size_t ib, const LoraTrace<T>& lt) {
        Mat<T> dlow;
        dlow.noalias() = dy * as_mat(p(ib)).transpose();
        dlow *= scale;
        if (T* gb = grad_ptr(grads, ib)) {
          MapMat<T>(gb, lt.low.cols(), dy.cols()).noalias() += scale * (lt.low.transpose() * dy);
        }
        Mat<T> ad = bt.a;
        apply_mask(ad, lt.input_mask);
        if (T* ga = grad_ptr(grads, ia)) {
          MapMat<T>(ga, ad.cols(), dlow.cols()).noalias() += ad.transpose() * dlow;
        }
        Mat<T> dad;
        dad.noalias() = dlow * as_mat(p(ia)).transpose();
        apply_mask(dad, lt.input_mask);
        da += dad;
      };
      lora_back(dq, ix.qa, ix.qb, bt.lora_q);
      lora_back(dv, ix.va, ix.vb, bt.lora_v);
    }
    dh_ = dmid + layer_norm_backward(da, p(ix.ln1_g), bt.ln1, grad_ptr(grads, ix.ln1_g),
                                     grad_ptr(grads, ix.ln1_b));
  }

  apply_mask(dh_, tr.emb_drop);
  T* gtok = grad_ptr(grads, layout_.tok);
  T* gpos = grad_ptr(grads, layout_.pos);
  const auto D = static_cast<Eigen::Index>(spec_.d_model);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 0; t < L; ++t) {
      const auto r = static_cast<Eigen::Index>(b * L + t);
      if (gtok) MapRow<T>(gtok + static_cast<std::size_t>(batch.at(b, t)) * spec_.d_model, D) += dh_.row(r);
      if (gpos) MapRow<T>(gpos + t * spec_.d_model, D) += dh_.row(r);
    }
  }
}

template <typename T>
std::pair<std::size_t, std::size_t> head_for(const Model<T>& model, const Layout& layout,
                                             Objective objective) {
  if (objective == Objective::kSl) {
    if (layout.sl_w == kNone) throw Error(ErrorCode::kMissingHead, "model has no SL head");
    return {layout.sl_w, layout.sl_b};
  }
  if (layout.lm_w == kNone) throw Error(ErrorCode::kMissingHead, "model has no LM head");
  (void)model;
  return {layout.lm_w, layout.lm_b};
}

template <typename T>
Logits<T> project(const Model<T>& model, const Hidden<T>& hidden, Objective objective) {
  const Layout layout = resolve(model);
  auto [iw, ib] = head_for(model, layout, objective);
  const auto& w = model.params()[iw];
  CMapMat<T> h(hidden.values.data(), static_cast<Eigen::Index>(hidden.batch * hidden.length),
               static_cast<Eigen::Index>(hidden.width));
  Mat<T> y;
  y.noalias() = h * as_mat(w);
  y.rowwise() += as_row(model.params()[ib]);
  Logits<T> out;
  out.rows = static_cast<std::size_t>(y.rows());
  out.cols = static_cast<std::size_t>(y.cols());
  out.values.assign(y.data(), y.data() + y.size());
  return out;
}

template <typename T>
LossAndGrads<T> compute_loss(const Model<T>& model, const LossBatch& batch, Objective objective,
                             const UnmaskConfig& cfg, std::mt19937_64* rng, bool want_grads,
                             bool mean) {
  if (batch.targets.empty()) {
    throw Error(ErrorCode::kNoContributingPositions, "batch has no supervised positions");
  }
  Engine<T> engine(model);
  auto [iw, ib] = head_for(model, engine.layout(), objective);
  Trace<T> tr;
  engine.forward(batch.tokens, cfg, rng, tr);

  const auto& w = model.params()[iw];
  const std::size_t n_classes = w.shape[1];
  const auto n_targets = static_cast<Eigen::Index>(batch.targets.size());
  const auto D = static_cast<Eigen::Index>(model.spec().d_model);
  const std::size_t L = batch.tokens.length;

  Mat<T> rows(n_targets, D);
  for (Eigen::Index i = 0; i < n_targets; ++i) {
    const Target& tg = batch.targets[static_cast<std::size_t>(i)];
    if (tg.row >= batch.tokens.batch || tg.position >= batch.tokens.valid_lens[tg.row]) {
      throw Error(ErrorCode::kIndexOutOfRange, "target outside valid positions");
    }
    if (tg.label < 0 || static_cast<std::size_t>(tg.label) >= n_classes) {
      throw Error(ErrorCode::kIndexOutOfRange, "target label " + std::to_string(tg.label) +
                                                   " outside " + std::to_string(n_classes) + " classes");
    }
    rows.row(i) = tr.hidden.row(static_cast<Eigen::Index>(tg.row * L + tg.position));
  }
  Mat<T> head_drop = dropout_mask<T>(rows.rows(), rows.cols(), model.spec().dropout, rng);
  apply_mask(rows, head_drop);

  Mat<T> logits;
  logits.noalias() = rows * as_mat(w);
  logits.rowwise() += as_row(model.params()[ib]);

  const T norm = mean ? T(1) / static_cast<T>(n_targets) : T(1);
  T total = T(0);
  Mat<T> dlogits(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < n_targets; ++i) {
    const T mx = logits.row(i).maxCoeff();
    auto e = (logits.row(i).array() - mx).exp();
    const T sum = e.sum();
    const int label = batch.targets[static_cast<std::size_t>(i)].label;
    total += std::log(sum) + mx - logits(i, label);
    dlogits.row(i) = e / sum;
    dlogits(i, label) -= T(1);
  }

  LossAndGrads<T> out;
  out.loss = total * norm;
  out.count = batch.targets.size();
  if (!want_grads) return out;

  dlogits *= norm;
  out.grads = zero_gradients(model.params());
  Mat<T> drows = linear_backward(rows, dlogits, w, grad_ptr(out.grads, iw), grad_ptr(out.grads, ib));
  apply_mask(drows, head_drop);
  Mat<T> d_hidden = Mat<T>::Zero(tr.hidden.rows(), tr.hidden.cols());
  for (Eigen::Index i = 0; i < n_targets; ++i) {
    const Target& tg = batch.targets[static_cast<std::size_t>(i)];
    d_hidden.row(static_cast<Eigen::Index>(tg.row * L + tg.position)) += drows.row(i);
  }
  engine.backward(batch.tokens, tr, d_hidden, out.grads);
  return out;
}

}  // namespace

template <typename T>
Hidden<T> forward(const Model<T>& model, const TokenBatch& batch, const UnmaskConfig& cfg,
                  std::mt19937_64* dropout_rng, bool keep_block_inputs) {
  Engine<T> engine(model);
  Trace<T> tr;
  engine.forward(batch, cfg, dropout_rng, tr);
  Hidden<T> out;
  out.batch = batch.batch;
  out.length = batch.length;
  out.width = model.spec().d_model;
  out.values.assign(tr.hidden.data(), tr.hidden.data() + tr.hidden.size());
  if (keep_block_inputs) {
    for (const auto& bt : tr.blocks) {
      out.block_inputs.emplace_back(bt.h_in.data(), bt.h_in.data() + bt.h_in.size());
    }
  }
  return out;
}

template <typename T>
Logits<T> clm_logits(const Model<T>& model, const Hidden<T>& hidden) {
  return project(model, hidden, Objective::kClm);
}

template <typename T>
Logits<T> mlm_logits(const Model<T>& model, const Hidden<T>& hidden) {
  return project(model, hidden, Objective::kMlm);
}

template <typename T>
Logits<T> sl_logits(const Model<T>& model, const Hidden<T>& hidden) {
  return project(model, hidden, Objective::kSl);
}

template <typename T>
LossAndGrads<T> loss_and_grads(const Model<T>& model, const LossBatch& batch, Objective objective,
                               const UnmaskConfig& cfg, std::mt19937_64* dropout_rng) {
  return compute_loss(model, batch, objective, cfg, dropout_rng, true, true);
}

template <typename T>
LossAndGrads<T> loss_sum_and_grads(const Model<T>& model, const LossBatch& batch,
                                   Objective objective, const UnmaskConfig& cfg,
                                   std::mt19937_64* dropout_rng) {
  return compute_loss(model, batch, objective, cfg, dropout_rng, true, false);
}

template <typename T>
T evaluate_loss(const Model<T>& model, const LossBatch& batch, Objective objective,
                const UnmaskConfig& cfg) {
  return compute_loss(model, batch, objective, cfg, nullptr, false, true).loss;
}

template <typename T>
void apply_lora(Model<T>& model, const LoraSpec& lora, std::uint64_t seed) {
  if (lora.rank == 0) throw Error(ErrorCode::kInvalidSpec, "LoRA rank must be >= 1");
  if (lora.dropout < 0.0 || lora.dropout >= 1.0) {
    throw Error(ErrorCode::kInvalidSpec, "LoRA dropout must be in [0, 1)");
  }
  if (model.lora()) throw Error(ErrorCode::kInvalidSpec, "model already has adapters");
  const auto& spec = model.spec();
  for (const auto& target : lora.targets) {
    if (target != "query" && target != "value") {
      throw Error(ErrorCode::kTargetNotFound, "unsupported LoRA target " + target);
    }
  }
  for (std::size_t b = 0; b < spec.n_blocks; ++b) {
    for (const char* leaf : {"attn.q.w", "attn.v.w"}) {
      if (!model.params().contains(block_param(b, leaf))) {
        throw Error(ErrorCode::kTargetNotFound, block_param(b, leaf));
      }
    }
  }
  set_all_trainable(model, false);
  for (auto& p : model.params()) {
    if (p.name.starts_with("lm_head.") || p.name.starts_with("sl_head.")) p.trainable = true;
  }

  std::mt19937_64 rng(seed);
  // Same bound as kaiming-uniform with a = sqrt(5).
  const double bound = 1.0 / std::sqrt(static_cast<double>(spec.d_model));
  std::uniform_real_distribution<double> uniform(-bound, bound);
  for (std::size_t b = 0; b < spec.n_blocks; ++b) {
    for (const char* proj : {"attn.q", "attn.v"}) {
      auto& a = model.params().add(block_param(b, std::string(proj) + ".lora_a"),
                                   {spec.d_model, lora.rank}, true);
      for (auto& x : a.value) x = static_cast<T>(uniform(rng));
      model.params().add(block_param(b, std::string(proj) + ".lora_b"), {lora.rank, spec.d_model},
                         true);
    }
  }
  model.set_lora(lora);
}

template <typename T>
void attach_sl_head(Model<T>& model, std::size_t n_labels, std::uint64_t seed) {
  if (n_labels == 0) throw Error(ErrorCode::kInvalidSpec, "SL head needs at least one label");
  auto& ps = model.params();
  for (const char* name : {"lm_head.w", "lm_head.b", "sl_head.w", "sl_head.b"}) {
    if (ps.contains(name)) ps.erase(name);
  }
  const std::size_t d = model.spec().d_model;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 0.02);
  // Heads sit before any LoRA factors in manifest order.
  ParamSet<T> rebuilt;
  auto copy = [&](const Param<T>& src) {
    auto& dst = rebuilt.add(src.name, src.shape, src.decay);
    dst.value = src.value;
    dst.trainable = src.trainable;
  };
  for (const auto& src : ps) {
    if (src.name.find("lora_") != std::string::npos) continue;
    copy(src);
  }
  auto& w = rebuilt.add("sl_head.w", {d, n_labels}, true);
  for (auto& x : w.value) x = static_cast<T>(normal(rng));
  rebuilt.add("sl_head.b", {n_labels}, false);
  for (const auto& src : ps) {
    if (src.name.find("lora_") != std::string::npos) copy(src);
  }
  ModelSpec spec = model.spec();
  spec.lm_head = false;
  spec.n_labels = n_labels;
  model = Model<T>(spec, std::move(rebuilt), model.lora());
}

template <typename T>
void set_all_trainable(Model<T>& model, bool trainable) {
  for (auto& p : model.params()) p.trainable = trainable;
}

std::size_t lora_trainable_count(const ModelSpec& spec, const LoraSpec& lora) {
  std::size_t head = 0;
  if (spec.lm_head) head += spec.d_model * spec.vocab_size + spec.vocab_size;
  if (spec.n_labels > 0) head += spec.d_model * spec.n_labels + spec.n_labels;
  return spec.n_blocks * 2 * (spec.d_model * lora.rank + lora.rank * spec.d_model) + head;
}

#define UNMASK_INSTANTIATE(T)                                                                    \
  template class Model<T>;                                                                       \
  template Hidden<T> forward<T>(const Model<T>&, const TokenBatch&, const UnmaskConfig&,         \
                                std::mt19937_64*, bool);                                         \
  template Logits<T> clm_logits<T>(const Model<T>&, const Hidden<T>&);                          \
  template Logits<T> mlm_logits<T>(const Model<T>&, const Hidden<T>&);                          \
  template Logits<T> sl_logits<T>(const Model<T>&, const Hidden<T>&);                           \
  template LossAndGrads<T> loss_and_grads<T>(const Model<T>&, const LossBatch&, Objective,       \
                                             const UnmaskConfig&, std::mt19937_64*);             \
  template LossAndGrads<T> loss_sum_and_grads<T>(const Model<T>&, const LossBatch&, Objective,   \
                                                 const UnmaskConfig&, std::mt19937_64*);         \
  template T evaluate_loss<T>(const Model<T>&, const LossBatch&, Objective, const UnmaskConfig&); \
  template void apply_lora<T>(Model<T>&, const LoraSpec&, std::uint64_t);                        \
  template void attach_sl_head<T>(Model<T>&, std::size_t, std::uint64_t);                        \
  template void set_all_trainable<T>(Model<T>&, bool);

UNMASK_INSTANTIATE(float)
UNMASK_INSTANTIATE(double)

#undef UNMASK_INSTANTIATE

}  // namespace unmask
