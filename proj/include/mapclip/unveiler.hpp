#pragma once

// Intra-clip unveiler: an L-layer stack that summarizes the clip's map
// queries into compact clip tokens, injects them back into the dense
// per-frame BEV features (recovering content hidden in single frames), and
// regenerates refined map tokens from the updated features.

#include <optional>
#include <vector>

#include "mapclip/framenet.hpp"

namespace mapclip::unveiler {

using framenet::FrameNet;
using framenet::FramePrediction;
using framenet::MapDecoderLayer;
using framenet::predict_from_tokens;
using numerics::Graph;
using numerics::Tensor;
using numerics::Var;

template <typename R>
struct ClipInputs {
  std::vector<Var<R>> bev;           // T x [H, W, C]
  std::vector<Var<R>> queries;       // T x [Ni*Np, C]
  std::vector<Var<R>> point_logits;  // T x [Ni*Np, 2] from the frame decoder
};

template <typename R>
struct UnveilerLayerOut {
  std::vector<Var<R>> map_tokens;         // T x [Ni*Np, C]
  std::vector<FramePrediction<R>> preds;  // T
  std::vector<Var<R>> bev_updated;        // T x [H, W, C]
  std::vector<Var<R>> seg_logits;         // T x [H*W, n_classes]
  Var<R> clip_tokens;                     // [Nc, C]
};

template <typename R>
struct ClipOutputs {
  std::vector<UnveilerLayerOut<R>> layers;  // L entries; back() feeds the memory write
  Var<R> clip_tokens() const { return layers.back().clip_tokens; }
  std::vector<Var<R>> map_tokens() const { return layers.back().map_tokens; }
};

template <typename R>
class Unveiler {
 public:
  Unveiler(nn::ParamSet<R>& ps, const ModelConfig& cfg, FrameNet<R>& net)
      : cfg_(cfg), net_(&net) {
    const int64_t c = cfg.C;
    clip_pos = ps.add("unveiler.clip_pos",
                      nn::init_normal<R>(ps.init_seed(), "unveiler.clip_pos", 0.5, {cfg.Nc, c}));
    clip_seed = ps.add("unveiler.clip_seed",
                       nn::init_normal<R>(ps.init_seed(), "unveiler.clip_seed", 0.5, {cfg.Nc, c}));
    temporal_emb = ps.add("unveiler.temporal_emb",
                          nn::init_normal<R>(ps.init_seed(), "unveiler.temporal_emb", 0.5, {cfg.T, c}));
    for (int l = 0; l < cfg.L; ++l) {
      const std::string nm = "unveiler.l" + std::to_string(l);
      layers_.push_back(Layer{
          nn::LayerNorm<R>(ps, nm + ".gen.ln_q", c),
          nn::LayerNorm<R>(ps, nm + ".gen.ln_kv", c),
          nn::MultiHeadAttention<R>(ps, nm + ".gen.attn", c, cfg.heads, "clip_gen"),
          nn::LayerNorm<R>(ps, nm + ".gen.ln_ffn", c),
          nn::FeedForward<R>(ps, nm + ".gen.ffn", c, c * cfg.ffn_mult),
          nn::LayerNorm<R>(ps, nm + ".upd.ln_q", c),
          nn::LayerNorm<R>(ps, nm + ".upd.ln_kv", c),
          nn::MultiHeadAttention<R>(ps, nm + ".upd.attn", c, cfg.heads, "bev_updater"),
          nn::LayerNorm<R>(ps, nm + ".upd.ln_ffn", c),
          nn::FeedForward<R>(ps, nm + ".upd.ffn", c, c * cfg.ffn_mult),
          MapDecoderLayer<R>(ps, nm + ".mapgen", cfg),
          nn::Linear<R>(ps, nm + ".seg", c, cfg.n_classes),
      });
    }
    bev_pos_ = nn::sinusoid_3d<R>(cfg.T, cfg.grid.h, cfg.grid.w, c);
  }

  // Map-token position encoding for frame t: instance + point + temporal.
  Var<R> map_pos(Graph<R>& g, int t) const {
    Var<R> base = net_->query_seed(g);
    Var<R> temp = slice_rows(g.param(*temporal_emb), t, 1);
    return add_bcast(base, reshape(temp, {cfg_.C}));
  }

  // Clip token generator: cross-attention from the token seed into the
  // flattened clip map queries.
  Var<R> clip_token_generator(Graph<R>& g, int layer, Var<R> seed, Var<R> kv, Var<R> kv_pos,
                              const DropoutCtx& dc) const {
    const Layer& L = layers_[static_cast<size_t>(layer)];
    Var<R> x = seed;
    {
      Var<R> q = add(L.gen_ln_q(g, x), g.param(*clip_pos));
      Var<R> kvn = L.gen_ln_kv(g, kv);
      Var<R> k = add(kvn, kv_pos);
      Var<R> v = cfg_.pos_in_values ? k : kvn;
      x = add(x, nn::dropout(g, L.gen_attn(g, q, k, v), dc.p, dc.rng));
    }
    {
      Var<R> h = L.gen_ln_ffn(g, x);
      x = add(x, nn::dropout(g, L.gen_ffn(g, h), dc.p, dc.rng));
    }
    return x;
  }

  // BEV updater: every BEV cell (query) attends into the Nc clip tokens, so
  // the score matrix is [T*H*W, Nc] per head - never quadratic in T*H*W.
  std::vector<Var<R>> bev_updater(Graph<R>& g, int layer, const std::vector<Var<R>>& bev,
                                  Var<R> clip_tokens, const DropoutCtx& dc) const {
    const Layer& L = layers_[static_cast<size_t>(layer)];
    const int64_t hw = static_cast<int64_t>(cfg_.grid.h) * cfg_.grid.w;
    std::vector<Var<R>> flat;
    flat.reserve(bev.size());
    for (const auto& b : bev) flat.push_back(reshape(b, {hw, cfg_.C}));
    Var<R> all = concat_rows(flat);  // [T*H*W, C]
    require(all.val().dim(0) == static_cast<int64_t>(bev.size()) * hw, "bev_updater: bad stack");
    Var<R> pos_b = g.input(slice_pos_(static_cast<int>(bev.size())));
    {
      Var<R> q = add(L.upd_ln_q(g, all), pos_b);
      Var<R> kvn = L.upd_ln_kv(g, clip_tokens);
      Var<R> k = add(kvn, g.param(*clip_pos));
      Var<R> v = cfg_.pos_in_values ? k : kvn;
      all = add(all, nn::dropout(g, L.upd_attn(g, q, k, v), dc.p, dc.rng));
    }
    {
      Var<R> h = L.upd_ln_ffn(g, all);
      all = add(all, nn::dropout(g, L.upd_ffn(g, h), dc.p, dc.rng));
    }
    std::vector<Var<R>> out;
    out.reserve(bev.size());
    for (size_t t = 0; t < bev.size(); ++t)
      out.push_back(reshape(slice_rows(all, static_cast<int64_t>(t) * hw, hw),
                            {cfg_.grid.h, cfg_.grid.w, cfg_.C}));
    return out;
  }

  // Full intra-clip stack. u_read seeds the first layer's clip tokens when
  // the inter-clip unveiler is active; otherwise the learnable seed is used.
  ClipOutputs<R> forward(Graph<R>& g, const ClipInputs<R>& in, std::optional<Var<R>> u_read,
                         const DropoutCtx& dc) const {
    const int t_frames = static_cast<int>(in.bev.size());
    require(t_frames >= 1 && in.queries.size() == in.bev.size() &&
                in.point_logits.size() == in.bev.size(),
            "intra_clip_forward: inconsistent clip inputs");

    // Flattened map queries with their position encodings (keys for the
    // clip token generator).
    std::vector<Var<R>> kv_parts, kv_pos_parts;
    for (int t = 0; t < t_frames; ++t) {
      kv_parts.push_back(in.queries[static_cast<size_t>(t)]);
      kv_pos_parts.push_back(map_pos(g, t));
    }
    Var<R> kv = concat_rows(kv_parts);
    Var<R> kv_pos = concat_rows(kv_pos_parts);

    ClipOutputs<R> out;
    Var<R> clip = u_read ? *u_read : g.param(*clip_seed);
    std::vector<Var<R>> tokens = in.queries;
    std::vector<Var<R>> u = in.point_logits;
    std::vector<Var<R>> bev = in.bev;

    for (int l = 0; l < cfg_.L; ++l) {
      UnveilerLayerOut<R> lo;
      clip = clip_token_generator(g, l, clip, kv, kv_pos, dc);
      lo.clip_tokens = clip;
      lo.bev_updated = bev_updater(g, l, bev, clip, dc);
      bev = lo.bev_updated;
      const Layer& L = layers_[static_cast<size_t>(l)];
      for (int t = 0; t < t_frames; ++t) {
        Var<R> ref = sigmoid(u[static_cast<size_t>(t)]);
        Var<R> tok = L.mapgen(g, tokens[static_cast<size_t>(t)], lo.bev_updated[static_cast<size_t>(t)],
                              ref, map_pos(g, t), g.param(*net_->inst_emb), net_->block_mask(),
                              cfg_.Ni, cfg_.Np, dc);
        FramePrediction<R> pred =
            predict_from_tokens(g, net_->heads, tok, std::nullopt, cfg_.Ni, cfg_.Np);
        u[static_cast<size_t>(t)] = pred.point_logits;
        tokens[static_cast<size_t>(t)] = tok;
        lo.map_tokens.push_back(tok);
        lo.preds.push_back(pred);
        lo.seg_logits.push_back(L.seg(
            g, reshape(lo.bev_updated[static_cast<size_t>(t)],
                       {static_cast<int64_t>(cfg_.grid.h) * cfg_.grid.w, cfg_.C})));
      }
      out.layers.push_back(std::move(lo));
    }
    return out;
  }

  std::shared_ptr<numerics::Parameter<R>> clip_pos, clip_seed, temporal_emb;

 private:
  struct Layer {
    nn::LayerNorm<R> gen_ln_q, gen_ln_kv;
    nn::MultiHeadAttention<R> gen_attn;
    nn::LayerNorm<R> gen_ln_ffn;
    nn::FeedForward<R> gen_ffn;
    nn::LayerNorm<R> upd_ln_q, upd_ln_kv;
    nn::MultiHeadAttention<R> upd_attn;
    nn::LayerNorm<R> upd_ln_ffn;
    nn::FeedForward<R> upd_ffn;
    MapDecoderLayer<R> mapgen;
    nn::Linear<R> seg;
  };

  // First t*H*W rows of the fixed 3D positional table (clips at a sequence
  // tail can be shorter than T).
  Tensor<R> slice_pos_(int t_frames) const {
    const int64_t hw = static_cast<int64_t>(cfg_.grid.h) * cfg_.grid.w;
    const int64_t rows = static_cast<int64_t>(t_frames) * hw;
    Tensor<R> out = Tensor<R>::zeros({rows, cfg_.C});
    std::copy_n(bev_pos_.ptr(), rows * cfg_.C, out.ptr());
    return out;
  }

  ModelConfig cfg_;
  FrameNet<R>* net_;
  std::vector<Layer> layers_;
  Tensor<R> bev_pos_;
};

}  // namespace mapclip::unveiler
