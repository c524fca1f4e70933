#pragma once

// Parameter registry, initializers, and the layer set used by the map
// construction model: linear / layernorm / feed-forward, multi-head
// attention with score-shape instrumentation, single-scale deformable
// attention, a TokenLearner-style summarizer, and AdamW.

#include <map>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "mapclip/graph.hpp"
#include "mapclip/rng.hpp"

namespace mapclip::nn {

using numerics::Graph;
using numerics::Parameter;
using numerics::SeededStream;
using numerics::Shape;
using numerics::Tensor;
using numerics::Var;

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

template <typename R>
class ParamSet {
 public:
  explicit ParamSet(uint64_t init_seed = 0) : init_seed_(init_seed) {}

  std::shared_ptr<Parameter<R>> add(const std::string& name, Tensor<R> init) {
    require(index_.find(name) == index_.end(), "parameter registered twice: " + name);
    auto p = std::make_shared<Parameter<R>>(name, std::move(init));
    index_[name] = items_.size();
    items_.push_back(p);
    return p;
  }

  std::shared_ptr<Parameter<R>> find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : items_[it->second];
  }

  const std::vector<std::shared_ptr<Parameter<R>>>& items() const { return items_; }

  void zero_grads() {
    for (auto& p : items_) p->zero_grad();
  }

  int64_t total_size() const {
    int64_t n = 0;
    for (const auto& p : items_) n += p->value.numel();
    return n;
  }

  uint64_t init_seed() const { return init_seed_; }

 private:
  std::vector<std::shared_ptr<Parameter<R>>> items_;
  std::unordered_map<std::string, size_t> index_;
  uint64_t init_seed_ = 0;
};

// Initializers are addressed by parameter name so registration order does
// not affect the values.
template <typename R>
Tensor<R> init_xavier(uint64_t seed, const std::string& name, int64_t fan_in, int64_t fan_out,
                      Shape shape) {
  SeededStream rng(seed, "init/" + name);
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor<R> t = Tensor<R>::zeros(std::move(shape));
  for (auto& v : t.data) v = static_cast<R>(rng.uniform(-limit, limit));
  return t;
}

template <typename R>
Tensor<R> init_normal(uint64_t seed, const std::string& name, double stddev, Shape shape) {
  SeededStream rng(seed, "init/" + name);
  Tensor<R> t = Tensor<R>::zeros(std::move(shape));
  for (auto& v : t.data) v = static_cast<R>(stddev * rng.normal());
  return t;
}

// ---------------------------------------------------------------------------
// Attention instrumentation
// ---------------------------------------------------------------------------

struct AttnShapeStats {
  int64_t score_rows = 0;  // per-head score matrix rows at the last call
  int64_t score_cols = 0;
  int heads = 0;
  int64_t calls = 0;
};

inline std::map<std::string, AttnShapeStats>& attn_stats() {
  thread_local std::map<std::string, AttnShapeStats> stats;
  return stats;
}

inline void attn_stats_reset() { attn_stats().clear(); }

inline void attn_stats_record(const std::string& tag, int64_t rows, int64_t cols, int heads) {
  auto& s = attn_stats()[tag];
  s.score_rows = rows;
  s.score_cols = cols;
  s.heads = heads;
  s.calls += 1;
}

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

template <typename R>
struct Linear {
  std::shared_ptr<Parameter<R>> w, b;

  Linear() = default;
  Linear(ParamSet<R>& ps, const std::string& name, int64_t in, int64_t out, bool with_bias = true) {
    w = ps.add(name + ".w", init_xavier<R>(ps.init_seed(), name + ".w", in, out, {in, out}));
    if (with_bias) b = ps.add(name + ".b", Tensor<R>::zeros({out}));
  }

  Var<R> operator()(Graph<R>& g, Var<R> x) const {
    Var<R> y = matmul(x, g.param(*w));
    return b ? add_bcast(y, g.param(*b)) : y;
  }
};

template <typename R>
struct LayerNorm {
  std::shared_ptr<Parameter<R>> gamma, beta;

  LayerNorm() = default;
  LayerNorm(ParamSet<R>& ps, const std::string& name, int64_t c) {
    gamma = ps.add(name + ".gamma", Tensor<R>::full({c}, R(1)));
    beta = ps.add(name + ".beta", Tensor<R>::zeros({c}));
  }

  Var<R> operator()(Graph<R>& g, Var<R> x) const {
    return layernorm(x, g.param(*gamma), g.param(*beta));
  }
};

template <typename R>
struct FeedForward {
  Linear<R> fc1, fc2;

  FeedForward() = default;
  FeedForward(ParamSet<R>& ps, const std::string& name, int64_t c, int64_t hidden)
      : fc1(ps, name + ".fc1", c, hidden), fc2(ps, name + ".fc2", hidden, c) {}

  Var<R> operator()(Graph<R>& g, Var<R> x) const { return fc2(g, relu(fc1(g, x))); }
};

// Two-layer perceptron head.
template <typename R>
struct Mlp2 {
  Linear<R> fc1, fc2;

  Mlp2() = default;
  Mlp2(ParamSet<R>& ps, const std::string& name, int64_t in, int64_t hidden, int64_t out)
      : fc1(ps, name + ".fc1", in, hidden), fc2(ps, name + ".fc2", hidden, out) {}

  Var<R> operator()(Graph<R>& g, Var<R> x) const { return fc2(g, relu(fc1(g, x))); }
};

template <typename R>
Var<R> dropout(Graph<R>& g, Var<R> x, double p, SeededStream* rng) {
  if (p <= 0.0 || rng == nullptr) return x;
  Tensor<R> mask = Tensor<R>::zeros(x.val().shape);
  const R keep = static_cast<R>(1.0 / (1.0 - p));
  for (auto& v : mask.data) v = rng->u01() < p ? R(0) : keep;
  return mul(x, g.input(std::move(mask)));
}

// Standard multi-head attention. Heads are processed sequentially so the
// live score matrix per head is exactly [Nq, Nk]; an optional additive mask
// (shared across heads) restricts the attention pattern. Position encodings
// are the caller's responsibility (added to q/k/v before the call).
template <typename R>
struct MultiHeadAttention {
  Linear<R> wq, wk, wv, wo;
  int heads = 1;
  std::string tag;

  MultiHeadAttention() = default;
  MultiHeadAttention(ParamSet<R>& ps, const std::string& name, int64_t c, int n_heads,
                     std::string stat_tag = {})
      : wq(ps, name + ".wq", c, c),
        wk(ps, name + ".wk", c, c, /*with_bias=*/false),
        wv(ps, name + ".wv", c, c),
        wo(ps, name + ".wo", c, c),
        heads(n_heads),
        tag(std::move(stat_tag)) {
    require_config(c % n_heads == 0, "attention: C must be divisible by heads");
  }

  Var<R> operator()(Graph<R>& g, Var<R> q_in, Var<R> k_in, Var<R> v_in,
                    const Tensor<R>* additive_mask = nullptr) const {
    const int64_t nq = q_in.val().dim(0);
    const int64_t nk = k_in.val().dim(0);
    const int64_t c = q_in.val().dim(1);
    const int64_t dh = c / heads;
    Var<R> q = wq(g, q_in);
    Var<R> k = wk(g, k_in);
    Var<R> v = wv(g, v_in);
    const R inv_sqrt = static_cast<R>(1.0 / std::sqrt(static_cast<double>(dh)));
    std::vector<Var<R>> head_outs;
    head_outs.reserve(static_cast<size_t>(heads));
    for (int h = 0; h < heads; ++h) {
      Var<R> qh = slice_cols(q, h * dh, dh);
      Var<R> kh = slice_cols(k, h * dh, dh);
      Var<R> vh = slice_cols(v, h * dh, dh);
      Var<R> scores = scale(matmul(qh, transpose2d(kh)), inv_sqrt);
      Var<R> probs = softmax_rows(scores, additive_mask);
      head_outs.push_back(matmul(probs, vh));
    }
    if (!tag.empty()) attn_stats_record(tag, nq, nk, heads);
    return wo(g, concat_cols(head_outs));
  }
};

// Single-scale deformable attention: each query carries a normalized
// reference point and samples `points` learned offsets per head from the
// value map by bilinear interpolation, mixing them with softmax weights.
// Offset weights start at zero with a fixed ring bias so initial samples
// surround the reference point (standard Deformable-DETR initialization).
template <typename R>
struct DeformableAttention {
  Linear<R> value_proj, out_proj, offset_head, weight_head;
  int heads = 1;
  int points = 4;

  DeformableAttention() = default;
  DeformableAttention(ParamSet<R>& ps, const std::string& name, int64_t c, int n_heads,
                      int n_points)
      : value_proj(ps, name + ".value", c, c),
        out_proj(ps, name + ".out", c, c),
        heads(n_heads),
        points(n_points) {
    require_config(c % n_heads == 0, "deformable attention: C must be divisible by heads");
    offset_head.w = ps.add(name + ".off.w", Tensor<R>::zeros({c, static_cast<int64_t>(n_heads) * n_points * 2}));
    Tensor<R> off_bias = Tensor<R>::zeros({static_cast<int64_t>(n_heads) * n_points * 2});
    for (int h = 0; h < n_heads; ++h) {
      const double angle = 2.0 * M_PI * h / n_heads;
      for (int k = 0; k < n_points; ++k) {
        const double radius = k + 1;
        off_bias.data[static_cast<size_t>((h * n_points + k) * 2 + 0)] = static_cast<R>(radius * std::cos(angle));
        off_bias.data[static_cast<size_t>((h * n_points + k) * 2 + 1)] = static_cast<R>(radius * std::sin(angle));
      }
    }
    offset_head.b = ps.add(name + ".off.b", std::move(off_bias));
    weight_head.w = ps.add(name + ".attw.w", Tensor<R>::zeros({c, static_cast<int64_t>(n_heads) * n_points}));
    weight_head.b = ps.add(name + ".attw.b", Tensor<R>::zeros({static_cast<int64_t>(n_heads) * n_points}));
  }

  // queries [N,C]; bev [H,W,C]; ref_norm [N,2] as (nx, ny) in [0,1]^2.
  Var<R> operator()(Graph<R>& g, Var<R> queries, Var<R> bev, Var<R> ref_norm) const {
    const Tensor<R>& bv = bev.val();
    require(bv.rank() == 3, "deformable attention: bev [H,W,C] required");
    const int64_t grid_h = bv.dim(0), grid_w = bv.dim(1), c = bv.dim(2);
    const int64_t n = queries.val().dim(0);
    require(ref_norm.val().rank() == 2 && ref_norm.val().dim(0) == n && ref_norm.val().dim(1) == 2,
            "deformable attention: ref_norm [N,2] required");
    require(queries.val().all_finite() && bv.all_finite(), "deformable attention: non-finite input");
    const int64_t dh = c / heads;

    Var<R> value = value_proj(g, reshape(bev, {grid_h * grid_w, c}));
    Var<R> offsets = offset_head(g, queries);        // [N, heads*points*2], cell units
    Var<R> weight_logits = weight_head(g, queries);  // [N, heads*points]
    Var<R> ref = clamp(ref_norm, R(0), R(1));

    // Offsets are expressed in cells and converted to the normalized frame.
    Tensor<R> inv_wh({2}, {static_cast<R>(1.0 / static_cast<double>(grid_w)),
                           static_cast<R>(1.0 / static_cast<double>(grid_h))});
    Var<R> inv_wh_v = g.input(std::move(inv_wh));

    std::vector<Var<R>> head_outs;
    head_outs.reserve(static_cast<size_t>(heads));
    for (int h = 0; h < heads; ++h) {
      Var<R> value_h = reshape(slice_cols(value, h * dh, dh), {grid_h, grid_w, dh});
      Var<R> w_h = softmax_rows(slice_cols(weight_logits, static_cast<int64_t>(h) * points, points));
      Var<R> acc;
      for (int k = 0; k < points; ++k) {
        Var<R> off = slice_cols(offsets, (static_cast<int64_t>(h) * points + k) * 2, 2);
        Var<R> loc = add(ref, mul_bcast(off, inv_wh_v));  // normalized (nx, ny)
        Var<R> nx = slice_cols(loc, 0, 1);
        Var<R> ny = slice_cols(loc, 1, 1);
        Var<R> row = add_const(scale(ny, static_cast<R>(grid_h)), R(-0.5));
        Var<R> col = add_const(scale(nx, static_cast<R>(grid_w)), R(-0.5));
        Var<R> coords = concat_cols(std::vector<Var<R>>{row, col});
        Var<R> sampled = bilinear(value_h, coords);  // [N, dh]
        Var<R> weighted = mul_colvec(sampled, reshape(slice_cols(w_h, k, 1), {n}));
        acc = k == 0 ? weighted : add(acc, weighted);
      }
      head_outs.push_back(acc);
    }
    return out_proj(g, concat_cols(head_outs));
  }
};

// TokenLearner-style summarizer: a linear scoring function produces one
// importance distribution over the inputs per output slot; each output is
// the corresponding convex combination of the raw inputs.
template <typename R>
struct TokenSummarizer {
  Linear<R> score;
  int64_t out_tokens = 0;
  std::string tag;

  TokenSummarizer() = default;
  TokenSummarizer(ParamSet<R>& ps, const std::string& name, int64_t c, int64_t k,
                  std::string stat_tag = {})
      : score(ps, name + ".score", c, k, /*with_bias=*/false),
        out_tokens(k),
        tag(std::move(stat_tag)) {}

  // inputs [N,C]; location embeddings enter only the scoring path.
  Var<R> operator()(Graph<R>& g, Var<R> inputs, Var<R> inputs_with_loc) const {
    const int64_t n = inputs.val().dim(0);
    require_domain(n >= 1, "token summarizer: empty input");
    Var<R> logits = transpose2d(score(g, inputs_with_loc));  // [k, N]
    Var<R> weights = softmax_rows(logits);
    if (!tag.empty()) attn_stats_record(tag, out_tokens, n, 1);
    return matmul(weights, inputs);  // [k, C]
  }
};

// Fixed 3D sinusoidal position encoding over (t, y, x), flattened to
// [T*H*W, C]. Pure function of the shape.
template <typename R>
Tensor<R> sinusoid_3d(int64_t t_dim, int64_t h, int64_t w, int64_t c) {
  int64_t cy = (c / 3) & ~int64_t(1);
  int64_t cx = cy;
  int64_t ct = c - cy - cx;
  require(ct >= 2 && ct % 2 == 0, "sinusoid_3d: channel count too small");
  Tensor<R> out = Tensor<R>::zeros({t_dim * h * w, c});
  auto fill_axis = [&](int64_t pos, int64_t base, int64_t span, int64_t idx, R* row) {
    for (int64_t j = 0; j < span / 2; ++j) {
      const double freq = std::pow(10000.0, -2.0 * static_cast<double>(j) / static_cast<double>(span));
      row[base + 2 * j] = static_cast<R>(std::sin(pos * freq));
      row[base + 2 * j + 1] = static_cast<R>(std::cos(pos * freq));
    }
    (void)idx;
  };
  for (int64_t t = 0; t < t_dim; ++t)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        R* row = out.ptr() + ((t * h + y) * w + x) * c;
        fill_axis(t, 0, ct, 0, row);
        fill_axis(y, ct, cy, 1, row);
        fill_axis(x, ct + cy, cx, 2, row);
      }
  return out;
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

template <typename R>
class AdamW {
 public:
  double lr = 6e-4;
  double beta1 = 0.9, beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;

  void step(ParamSet<R>& params) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
    for (const auto& p : params.items()) {
      if (!p->requires_grad) continue;
      auto& st = state_[p.get()];
      if (st.m.data.empty()) {
        st.m = Tensor<R>::zeros(p->value.shape);
        st.v = Tensor<R>::zeros(p->value.shape);
      }
      for (int64_t i = 0; i < p->value.numel(); ++i) {
        const double gi = static_cast<double>(p->grad.data[static_cast<size_t>(i)]);
        double m = beta1 * static_cast<double>(st.m.data[static_cast<size_t>(i)]) + (1.0 - beta1) * gi;
        double v = beta2 * static_cast<double>(st.v.data[static_cast<size_t>(i)]) + (1.0 - beta2) * gi * gi;
        st.m.data[static_cast<size_t>(i)] = static_cast<R>(m);
        st.v.data[static_cast<size_t>(i)] = static_cast<R>(v);
        const double mhat = m / bc1;
        const double vhat = v / bc2;
        double upd = mhat / (std::sqrt(vhat) + eps) + weight_decay * static_cast<double>(p->value.data[static_cast<size_t>(i)]);
        p->value.data[static_cast<size_t>(i)] -= static_cast<R>(lr * upd);
      }
    }
  }

  int64_t steps_taken() const { return t_; }

 private:
  struct State {
    Tensor<R> m, v;
  };
  int64_t t_ = 0;
  std::unordered_map<Parameter<R>*, State> state_;
};

}  // namespace mapclip::nn
