#pragma once

// Frame-level map network: a small convolutional BEV encoder over the
// synthetic observation plus a deformable-attention map decoder. Exposes
// the same interface the clip-level modules consume: per-frame BEV features
// and hierarchical (instance x point) map queries, with shared prediction
// heads.

#include <optional>
#include <vector>

#include "mapclip/model_config.hpp"
#include "mapclip/nn.hpp"
#include "mapclip/synthworld.hpp"

namespace mapclip::framenet {

using numerics::Graph;
using numerics::Shape;
using numerics::Tensor;
using numerics::Var;

// Prediction heads shared between the frame decoder and the unveiler's map
// generator: a 2-layer MLP regressing per-point coordinate updates (squashed
// with a logistic) and a linear classifier on instance-pooled tokens.
template <typename R>
struct MapHeads {
  nn::Mlp2<R> point_mlp;  // C -> C -> 2
  nn::Linear<R> cls;      // C -> n_classes + 1

  MapHeads() = default;
  MapHeads(nn::ParamSet<R>& ps, const ModelConfig& cfg)
      : point_mlp(ps, "heads.point", cfg.C, cfg.C, 2),
        cls(ps, "heads.cls", cfg.C, cfg.n_classes + 1) {}
};

template <typename R>
struct FramePrediction {
  Var<R> cls_logits;    // [Ni, K+1]
  Var<R> point_logits;  // [Ni*Np, 2], pre-squash
  Var<R> points;        // [Ni*Np, 2], in [0,1]^2 as (nx, ny)
};

// points = sigmoid(base_logits + MLP(tokens)); cls from instance-pooled
// tokens. base may be invalid (treated as zero) for standalone use.
template <typename R>
FramePrediction<R> predict_from_tokens(Graph<R>& g, const MapHeads<R>& heads, Var<R> tokens,
                                       std::optional<Var<std::type_identity_t<R>>> base_logits,
                                       int ni, int np) {
  require(tokens.val().all_finite(), "prediction heads: non-finite tokens");
  FramePrediction<R> out;
  Var<R> delta = heads.point_mlp(g, tokens);
  out.point_logits = base_logits ? add(*base_logits, delta) : delta;
  out.points = sigmoid(out.point_logits);
  const int64_t c = tokens.val().dim(1);
  Var<R> pooled = mean_middle(reshape(tokens, {ni, np, c}));
  out.cls_logits = heads.cls(g, pooled);
  return out;
}

// One decoder layer: deformable cross-attention into the BEV map, decoupled
// self-attention (instances with points pooled, then points within each
// instance), and a feed-forward, all pre-norm with residuals.
template <typename R>
struct MapDecoderLayer {
  nn::LayerNorm<R> ln_deform, ln_inst, ln_pts, ln_ffn;
  nn::DeformableAttention<R> deform;
  nn::MultiHeadAttention<R> inst_attn, point_attn;
  nn::FeedForward<R> ffn;

  MapDecoderLayer() = default;
  MapDecoderLayer(nn::ParamSet<R>& ps, const std::string& name, const ModelConfig& cfg)
      : ln_deform(ps, name + ".ln_deform", cfg.C),
        ln_inst(ps, name + ".ln_inst", cfg.C),
        ln_pts(ps, name + ".ln_pts", cfg.C),
        ln_ffn(ps, name + ".ln_ffn", cfg.C),
        deform(ps, name + ".deform", cfg.C, cfg.heads, cfg.deform_points),
        inst_attn(ps, name + ".inst_attn", cfg.C, cfg.heads, "decoder_inst"),
        point_attn(ps, name + ".point_attn", cfg.C, cfg.heads, "decoder_point"),
        ffn(ps, name + ".ffn", cfg.C, cfg.C * cfg.ffn_mult) {}

  // tokens [Ni*Np, C]; pos_full [Ni*Np, C]; pos_inst [Ni, C]; block_mask is
  // the additive block-diagonal mask restricting point attention to one
  // instance.
  Var<R> operator()(Graph<R>& g, Var<R> tokens, Var<R> bev, Var<R> ref_norm, Var<R> pos_full,
                    Var<R> pos_inst, const Tensor<R>& block_mask, int ni, int np,
                    const DropoutCtx& dc) const {
    const int64_t c = tokens.val().dim(1);
    Var<R> x = tokens;
    {
      Var<R> h = ln_deform(g, x);
      Var<R> o = deform(g, add(h, pos_full), bev, ref_norm);
      x = add(x, nn::dropout(g, o, dc.p, dc.rng));
    }
    {
      Var<R> h = ln_inst(g, x);
      Var<R> pooled = mean_middle(reshape(h, {ni, np, c}));  // [Ni, C]
      Var<R> qk = add(pooled, pos_inst);
      Var<R> o = inst_attn(g, qk, qk, pooled);
      Var<R> spread = reshape(expand_middle(o, np), {static_cast<int64_t>(ni) * np, c});
      x = add(x, nn::dropout(g, spread, dc.p, dc.rng));
    }
    {
      Var<R> h = ln_pts(g, x);
      Var<R> qk = add(h, pos_full);
      Var<R> o = point_attn(g, qk, qk, h, &block_mask);
      x = add(x, nn::dropout(g, o, dc.p, dc.rng));
    }
    {
      Var<R> h = ln_ffn(g, x);
      x = add(x, nn::dropout(g, ffn(g, h), dc.p, dc.rng));
    }
    return x;
  }
};

template <typename R>
struct FrameDecode {
  Var<R> queries;                               // final map queries [Ni*Np, C]
  Var<R> point_logits;                          // final point logits [Ni*Np, 2]
  std::vector<FramePrediction<R>> layer_preds;  // one per decoder layer
  Var<R> seg_logits;                            // [H*W, n_classes]
};

template <typename R>
class FrameNet {
 public:
  FrameNet(nn::ParamSet<R>& ps, const ModelConfig& cfg) : cfg_(cfg), heads(ps, cfg) {
    cfg.validate();
    const int64_t c = cfg.C;
    const int64_t obs_c = synthworld::kObsChannels;
    const int64_t mids[3] = {16, 16, 32};
    int64_t in_c = obs_c;
    for (int i = 0; i < 4; ++i) {
      const int64_t out_c = i == 3 ? c : mids[i];
      const std::string name = "framenet.enc" + std::to_string(i);
      enc_w_[i] = ps.add(name + ".w", nn::init_xavier<R>(ps.init_seed(), name + ".w", 9 * in_c,
                                                         out_c, {9 * in_c, out_c}));
      enc_b_[i] = ps.add(name + ".b", Tensor<R>::zeros({out_c}));
      in_c = out_c;
    }
    seg_head = nn::Linear<R>(ps, "framenet.seg", c, cfg.n_classes);
    inst_emb = ps.add("framenet.inst_emb",
                      nn::init_normal<R>(ps.init_seed(), "framenet.inst_emb", 0.5, {cfg.Ni, c}));
    point_emb = ps.add("framenet.point_emb",
                       nn::init_normal<R>(ps.init_seed(), "framenet.point_emb", 0.5, {cfg.Np, c}));
    for (int l = 0; l < cfg.dec_layers; ++l)
      dec_layers_.emplace_back(ps, "framenet.dec" + std::to_string(l), cfg);
    // Categories start rare: bias the classifier toward "no object".
    auto& cls_b = heads.cls.b->value;
    for (int k = 0; k < cfg.n_classes; ++k) cls_b.data[static_cast<size_t>(k)] = R(-2.0);

    block_mask_ = Tensor<R>::zeros({cfg.tokens_per_frame(), cfg.tokens_per_frame()});
    for (int64_t a = 0; a < cfg.tokens_per_frame(); ++a)
      for (int64_t b = 0; b < cfg.tokens_per_frame(); ++b)
        if (a / cfg.Np != b / cfg.Np)
          block_mask_.data[static_cast<size_t>(a * cfg.tokens_per_frame() + b)] = R(-1e9);
  }

  // Observation [H, W, kObsChannels] -> BEV features [H, W, C].
  Var<R> encode(Graph<R>& g, const Tensor<float>& obs) const {
    require(obs.rank() == 3 && obs.dim(0) == cfg_.grid.h && obs.dim(1) == cfg_.grid.w &&
                obs.dim(2) == synthworld::kObsChannels,
            "encode_bev: observation shape mismatch with grid spec");
    Var<R> x = g.input(obs.template cast<R>());
    for (int i = 0; i < 4; ++i) {
      x = conv3x3(x, g.param(*enc_w_[i]), g.param(*enc_b_[i]));
      if (i < 3) x = relu(x);
    }
    return x;
  }

  // Hierarchical query seed: instance embedding + point embedding.
  Var<R> query_seed(Graph<R>& g) const {
    Var<R> inst = g.param(*inst_emb);                       // [Ni, C]
    Var<R> pts = g.param(*point_emb);                       // [Np, C]
    Var<R> inst_tiled = expand_middle(inst, cfg_.Np);       // [Ni, Np, C]
    Var<R> flat = reshape(inst_tiled, {cfg_.tokens_per_frame(), cfg_.C});
    // add point embedding broadcast over instances
    Var<R> pts_flat = reshape(pts, {static_cast<int64_t>(cfg_.Np) * cfg_.C});
    return add_bcast(flat, pts_flat);
  }

  FrameDecode<R> decode(Graph<R>& g, Var<R> bev, const DropoutCtx& dc) const {
    FrameDecode<R> out;
    Var<R> pos_full = query_seed(g);
    Var<R> pos_inst = g.param(*inst_emb);
    Var<R> tokens = pos_full;  // initial content equals the hierarchical embedding
    // Each layer predicts coordinates absolutely in inverse-squash space;
    // its reference points are the previous layer's predictions.
    Var<R> u = heads.point_mlp(g, tokens);
    Var<R> ref = sigmoid(u);
    for (int l = 0; l < cfg_.dec_layers; ++l) {
      tokens = dec_layers_[static_cast<size_t>(l)](g, tokens, bev, ref, pos_full, pos_inst,
                                                   block_mask_, cfg_.Ni, cfg_.Np, dc);
      FramePrediction<R> pred = predict_from_tokens(g, heads, tokens, std::nullopt, cfg_.Ni, cfg_.Np);
      u = pred.point_logits;
      ref = pred.points;
      out.layer_preds.push_back(pred);
    }
    out.queries = tokens;
    out.point_logits = u;
    out.seg_logits = seg_head(g, reshape(bev, {static_cast<int64_t>(cfg_.grid.h) * cfg_.grid.w, cfg_.C}));
    return out;
  }

  const ModelConfig& config() const { return cfg_; }
  const Tensor<R>& block_mask() const { return block_mask_; }

  MapHeads<R> heads;
  nn::Linear<R> seg_head;
  std::shared_ptr<numerics::Parameter<R>> inst_emb, point_emb;

 private:
  ModelConfig cfg_;
  std::shared_ptr<numerics::Parameter<R>> enc_w_[4], enc_b_[4];
  std::vector<MapDecoderLayer<R>> dec_layers_;
  Tensor<R> block_mask_;
};

}  // namespace mapclip::framenet
