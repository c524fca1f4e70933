#pragma once

// Clip-level orchestration: clip schedules, sequence inference with
// overlapping-frame merging and memory threading, and the 3-clip training
// step with per-clip backpropagation.

#include <memory>
#include <optional>
#include <vector>

#include "mapclip/losses.hpp"
#include "mapclip/token_memory.hpp"
#include "mapclip/unveiler.hpp"

namespace mapclip::pipeline {

using framenet::FrameDecode;
using framenet::FrameNet;
using numerics::Graph;
using numerics::Tensor;
using numerics::Var;
using synthworld::FrameObservation;

// --- clip schedule ----------------------------------------------------------

struct ClipSchedule {
  int T = 0, S = 0, N_T = 0;
  std::vector<std::vector<int>> clips;  // 1-based frame indices, each of length T
};

// Clip k covers frames {kS+1, ..., kS+T}; the final clip is shifted back to
// end at the last frame when the formula overruns the sequence.
inline ClipSchedule make_clips(int n_t, int t, int s) {
  require_config(t >= 1 && t <= n_t, "make_clips: need 1 <= T <= N_T");
  require_config(s >= 1 && s <= t, "make_clips: need 1 <= S <= T (S > T would skip frames)");
  ClipSchedule sched;
  sched.T = t;
  sched.S = s;
  sched.N_T = n_t;
  const int n_clips = (n_t - t + s - 1) / s + 1;
  for (int k = 0; k < n_clips; ++k) {
    int start = k * s + 1;
    if (start + t - 1 > n_t) start = n_t - t + 1;  // back-shift the tail clip
    std::vector<int> frames(static_cast<size_t>(t));
    for (int i = 0; i < t; ++i) frames[static_cast<size_t>(i)] = start + i;
    sched.clips.push_back(std::move(frames));
  }
  return sched;
}

// --- model bundle -------------------------------------------------------------

template <typename R>
struct Model {
  ModelConfig cfg;
  AblationConfig abl;
  nn::ParamSet<R> params;
  std::unique_ptr<FrameNet<R>> net;
  std::unique_ptr<unveiler::Unveiler<R>> unv;
  std::unique_ptr<memory::InterClipMemory<R>> mem;

  Model(const ModelConfig& c, const AblationConfig& a, uint64_t init_seed)
      : cfg(c), abl(a), params(init_seed) {
    cfg.validate();
    abl.validate();
    net = std::make_unique<FrameNet<R>>(params, cfg);
    if (abl.intra_clip) unv = std::make_unique<unveiler::Unveiler<R>>(params, cfg, *net);
    if (abl.inter_clip)
      mem = std::make_unique<memory::InterClipMemory<R>>(
          params, cfg, abl.write_inputs == WriteInputs::clip_map_bev);
  }
};

// Frame-level parameters (encoder, decoder, shared heads and query
// embeddings) stop receiving gradients; the unveiler and memory keep
// training.
template <typename R>
void freeze_framenet(Model<R>& model) {
  for (const auto& p : model.params.items()) {
    if (p->name.rfind("framenet.", 0) == 0 || p->name.rfind("heads.", 0) == 0)
      p->requires_grad = false;
  }
  model.abl.freeze_framenet = true;
}

// --- plain predictions --------------------------------------------------------

struct MapPrediction {
  std::vector<std::vector<double>> probs;             // [Ni][K+1]
  std::vector<std::vector<geometry::Vec2>> points_m;  // [Ni][Np], ego-frame meters
  int from_clip = -1;
};

template <typename R>
MapPrediction to_plain(const framenet::FramePrediction<R>& pred, const ModelConfig& cfg) {
  MapPrediction out;
  const auto mi = losses::extract_match_inputs(pred, cfg.Ni, cfg.Np);
  out.probs = mi.probs;
  out.points_m.resize(static_cast<size_t>(cfg.Ni));
  for (int i = 0; i < cfg.Ni; ++i) {
    out.points_m[static_cast<size_t>(i)].resize(static_cast<size_t>(cfg.Np));
    for (int p = 0; p < cfg.Np; ++p)
      out.points_m[static_cast<size_t>(i)][static_cast<size_t>(p)] =
          losses::denormalize_point(mi.points[static_cast<size_t>(i)][static_cast<size_t>(p)], cfg.grid);
  }
  return out;
}

// --- clip forward -------------------------------------------------------------

template <typename R>
struct FrameVars {
  Var<R> bev;
  FrameDecode<R> decode;
};

template <typename R>
FrameVars<R> run_framenet(Graph<R>& g, const Model<R>& model, const FrameObservation& obs,
                          const DropoutCtx& dc) {
  FrameVars<R> out;
  out.bev = model.net->encode(g, obs.observation);
  out.decode = model.net->decode(g, out.bev, dc);
  return out;
}

template <typename R>
struct ClipResult {
  std::vector<FrameVars<R>> frames;
  std::optional<unveiler::ClipOutputs<R>> clip;
  std::optional<Var<R>> new_memory;
};

// One clip-level inference: read (when the inter-clip unveiler is on), the
// intra-clip stack, then the memory write.
template <typename R>
ClipResult<R> run_clip(Graph<R>& g, const Model<R>& model, std::vector<FrameVars<R>> frames,
                       std::optional<Var<R>> memory_in, const DropoutCtx& dc) {
  ClipResult<R> out;
  out.frames = std::move(frames);
  if (!model.abl.intra_clip) return out;

  unveiler::ClipInputs<R> in;
  for (const auto& f : out.frames) {
    in.bev.push_back(f.bev);
    in.queries.push_back(f.decode.queries);
    in.point_logits.push_back(f.decode.point_logits);
  }

  std::optional<Var<R>> u_read;
  std::optional<Var<R>> qflat;
  if (model.abl.inter_clip) {
    require(memory_in.has_value(), "run_clip: inter-clip unveiler needs a memory state");
    require(static_cast<int>(in.queries.size()) == model.cfg.T,
            "run_clip: memory addressing requires clips of exactly T frames");
    if (model.abl.read_inputs == ReadInputs::memory_and_queries) qflat = concat_rows(in.queries);
    u_read = model.mem->read(g, *memory_in, qflat, model.abl.read_inputs);
  }

  out.clip = model.unv->forward(g, in, u_read, dc);

  if (model.abl.inter_clip) {
    std::optional<Var<R>> map_flat;
    if (model.abl.write_inputs != WriteInputs::clip_only)
      map_flat = concat_rows(out.clip->map_tokens());
    std::optional<Var<R>> bev_pooled;
    if (model.abl.write_inputs == WriteInputs::clip_map_bev) {
      std::vector<Var<R>> pooled;
      for (const auto& b : out.clip->layers.back().bev_updated)
        pooled.push_back(avgpool2d(b, model.mem->bev_pool_stride()));
      bev_pooled = concat_rows(pooled);
    }
    out.new_memory = model.mem->write(g, out.clip->clip_tokens(), map_flat, *memory_in,
                                      model.abl.write_inputs, bev_pooled);
  }
  return out;
}

// --- sequence inference ---------------------------------------------------------

enum class MergeRule { latest_clip_wins, earliest_clip_wins };

template <typename R>
struct SequenceResult {
  std::vector<MapPrediction> per_frame;               // one final prediction per frame
  std::vector<memory::MemoryTokens<R>> memory_trace;  // state after each clip
  int clip_inferences = 0;
};

// Frame-level outputs are computed once per frame and reused across
// overlapping clips; memory is threaded clip k -> k+1.
template <typename R>
SequenceResult<R> run_sequence(const Model<R>& model, const std::vector<FrameObservation>& frames,
                               MergeRule merge = MergeRule::latest_clip_wins) {
  require_domain(!frames.empty(), "run_sequence: empty sequence");
  const int n_t = static_cast<int>(frames.size());
  const ClipSchedule sched = make_clips(n_t, std::min(model.cfg.T, n_t), model.cfg.S);
  const DropoutCtx dc;  // inference: dropout off

  struct Cached {
    Tensor<R> bev, queries, point_logits;
    MapPrediction frame_pred;
    bool ready = false;
  };
  std::vector<Cached> cache(static_cast<size_t>(n_t));

  SequenceResult<R> result;
  result.per_frame.resize(static_cast<size_t>(n_t));

  Tensor<R> memory_value;
  if (model.abl.inter_clip) {
    Graph<R> g;
    g.set_recording(false);
    memory_value = model.mem->init_memory(g).val();
    result.memory_trace.push_back({memory_value, -1});
  }

  for (size_t k = 0; k < sched.clips.size(); ++k) {
    Graph<R> g;
    g.set_recording(false);
    std::vector<FrameVars<R>> fv;
    for (int fidx : sched.clips[k]) {
      Cached& c = cache[static_cast<size_t>(fidx - 1)];
      if (!c.ready) {
        FrameVars<R> one = run_framenet(g, model, frames[static_cast<size_t>(fidx - 1)], dc);
        c.bev = one.bev.val();
        c.queries = one.decode.queries.val();
        c.point_logits = one.decode.point_logits.val();
        c.frame_pred = to_plain(one.decode.layer_preds.back(), model.cfg);
        c.ready = true;
        fv.push_back(std::move(one));
      } else {
        FrameVars<R> one;
        one.bev = g.input(c.bev);
        one.decode.queries = g.input(c.queries);
        one.decode.point_logits = g.input(c.point_logits);
        fv.push_back(std::move(one));
      }
    }
    std::optional<Var<R>> mem_in;
    if (model.abl.inter_clip) mem_in = g.input(memory_value);
    ClipResult<R> res = run_clip(g, model, std::move(fv), mem_in, dc);
    ++result.clip_inferences;

    for (size_t i = 0; i < sched.clips[k].size(); ++i) {
      const int fidx = sched.clips[k][i];
      MapPrediction pred;
      if (res.clip) {
        pred = to_plain(res.clip->layers.back().preds[i], model.cfg);
      } else {
        pred = cache[static_cast<size_t>(fidx - 1)].frame_pred;
      }
      pred.from_clip = static_cast<int>(k);
      auto& slot = result.per_frame[static_cast<size_t>(fidx - 1)];
      const bool write = merge == MergeRule::latest_clip_wins || slot.from_clip < 0;
      if (write) slot = std::move(pred);
    }

    if (res.new_memory) {
      memory_value = res.new_memory->val();
      result.memory_trace.push_back({memory_value, static_cast<int>(k)});
    }
  }
  return result;
}

// --- training step ---------------------------------------------------------------

// Per-frame supervision targets, precomputed once per dataset frame.
struct FrameTargets {
  std::vector<geometry::PolylineElement> gts_norm;
  geometry::CategoryMasks masks;
};

inline FrameTargets make_targets(const FrameObservation& obs, const geometry::BevGridSpec& grid,
                                 double stroke_width) {
  FrameTargets t;
  t.gts_norm = losses::normalize_elements(obs.full_gt, grid);
  t.masks = geometry::rasterize(obs.full_gt, grid, stroke_width);
  return t;
}

struct StepRecord {
  std::vector<losses::LossBreakdown> clip_losses;  // one entry per clip inference
  double total() const {
    double s = 0.0;
    for (const auto& b : clip_losses) s += b.total;
    return s;
  }
};

// One optimization step over a window of consecutive clips (three at the
// default schedule): loss is computed and backpropagated after each clip
// inference; the memory value is threaded through the window and its
// gradient stops at the window boundary; a single optimizer update follows.
template <typename R>
StepRecord train_step(Model<R>& model, nn::AdamW<R>& opt,
                      const std::vector<FrameObservation>& scene_frames,
                      const std::vector<const FrameTargets*>& targets,  // per scene frame
                      const std::vector<std::vector<int>>& window,      // clip frame indices
                      const losses::LossWeights& weights, numerics::SeededStream* dropout_rng,
                      bool frame_branch_only = false) {
  require(!window.empty(), "train_step: empty window");
  for (size_t k = 0; k < window.size(); ++k) {
    require(static_cast<int>(window[k].size()) == std::min<int>(model.cfg.T, static_cast<int>(scene_frames.size())),
            "train_step: clip length mismatch");
    if (k > 0)
      require(window[k][0] - window[k - 1][0] == model.cfg.S,
              "train_step: clips must be consecutive under the schedule");
  }

  model.params.zero_grads();
  Graph<R> g;
  DropoutCtx dc{model.cfg.dropout_p, dropout_rng};

  const bool use_clip = model.abl.intra_clip && !frame_branch_only;
  std::optional<Var<R>> memory;
  if (use_clip && model.abl.inter_clip) memory = model.mem->init_memory(g);

  StepRecord record;
  for (const auto& clip_frames : window) {
    std::vector<FrameVars<R>> fv;
    std::vector<std::vector<geometry::PolylineElement>> gts;
    std::vector<geometry::CategoryMasks> masks;
    for (int fidx : clip_frames) {
      fv.push_back(run_framenet(g, model, scene_frames[static_cast<size_t>(fidx - 1)], dc));
      gts.push_back(targets[static_cast<size_t>(fidx - 1)]->gts_norm);
      masks.push_back(targets[static_cast<size_t>(fidx - 1)]->masks);
    }

    losses::TotalLossInputs<R> in;
    in.gts_norm = &gts;
    in.gt_masks = &masks;
    for (const auto& f : fv) {
      in.frame_preds.push_back(f.decode.layer_preds);
      in.frame_seg.push_back(f.decode.seg_logits);
    }

    if (use_clip) {
      ClipResult<R> res = run_clip(g, model, std::move(fv), memory, dc);
      if (res.clip) {
        for (const auto& layer : res.clip->layers) {
          in.clip_preds.push_back(layer.preds);
          in.clip_seg.push_back(layer.seg_logits);
        }
      }
      if (res.new_memory) memory = res.new_memory;
    }

    losses::LossBreakdown breakdown;
    Var<R> loss = losses::total_loss(g, in, weights, model.cfg.Ni, model.cfg.Np, &breakdown);
    g.backward(loss);
    record.clip_losses.push_back(std::move(breakdown));
  }
  opt.step(model.params);
  return record;
}

// --- frame dropping ---------------------------------------------------------------

// Simulated communication loss: every frame after the first is replaced by
// an all-zero observation with probability `rate`. Draws are indexed by
// frame so the dropped sets nest as the rate grows.
inline std::vector<FrameObservation> frame_drop(const std::vector<FrameObservation>& frames,
                                                double rate, uint64_t seed) {
  require(rate >= 0.0 && rate <= 1.0, "frame_drop: rate must lie in [0,1]");
  std::vector<FrameObservation> out = frames;
  for (size_t i = 1; i < out.size(); ++i) {
    numerics::SeededStream s(seed, "drop/" + std::to_string(i + 1));
    if (s.u01() < rate) {
      std::fill(out[i].observation.data.begin(), out[i].observation.data.end(), 0.0f);
    }
  }
  return out;
}

}  // namespace mapclip::pipeline
