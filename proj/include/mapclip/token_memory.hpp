#pragma once

// Inter-clip unveiler: a bounded set of M memory tokens rewritten once per
// clip through TokenLearner-style summarization with location-based
// addressing. Read produces the clip-token seed; write folds the finished
// clip back into memory. Tokens that stop being selected simply receive
// vanishing summarizer weight - there is no explicit eviction.

#include <optional>

#include "mapclip/model_config.hpp"
#include "mapclip/nn.hpp"

namespace mapclip::memory {

using numerics::Graph;
using numerics::Tensor;
using numerics::Var;

// Snapshot of the memory between clips (plain values, no graph).
template <typename R>
struct MemoryTokens {
  Tensor<R> values;    // [M, C]
  int clip_index = -1; // clip that wrote it; -1 for the learned initial state
};

template <typename R>
class InterClipMemory {
 public:
  InterClipMemory(nn::ParamSet<R>& ps, const ModelConfig& cfg, bool with_bev_slots)
      : cfg_(cfg),
        read_summ_(ps, "memory.read", cfg.C, cfg.Nc, "summarizer_read"),
        write_summ_(ps, "memory.write", cfg.C, cfg.M, "summarizer_write") {
    const int64_t c = cfg.C;
    loc_mem = ps.add("memory.loc_mem",
                     nn::init_normal<R>(ps.init_seed(), "memory.loc_mem", 0.5, {cfg.M, c}));
    loc_clip = ps.add("memory.loc_clip",
                      nn::init_normal<R>(ps.init_seed(), "memory.loc_clip", 0.5, {cfg.Nc, c}));
    loc_map = ps.add("memory.loc_map", nn::init_normal<R>(ps.init_seed(), "memory.loc_map", 0.5,
                                                          {cfg.clip_query_tokens(), c}));
    init_tokens = ps.add("memory.init_tokens", nn::init_normal<R>(ps.init_seed(),
                                                                  "memory.init_tokens", 0.5,
                                                                  {cfg.Nc, c}));
    if (with_bev_slots) {
      bev_pool_stride_ = 1;
      int64_t bev_tokens;
      do {
        ++bev_pool_stride_;
        const int64_t ph = (cfg.grid.h + bev_pool_stride_ - 1) / bev_pool_stride_;
        const int64_t pw = (cfg.grid.w + bev_pool_stride_ - 1) / bev_pool_stride_;
        bev_tokens = static_cast<int64_t>(cfg.T) * ph * pw;
      } while (bev_tokens > 1024);
      loc_bev = ps.add("memory.loc_bev", nn::init_normal<R>(ps.init_seed(), "memory.loc_bev", 0.5,
                                                            {bev_tokens, c}));
    }
  }

  // Learned initial memory: a write over the learnable clip embeddings.
  Var<R> init_memory(Graph<R>& g) const {
    Var<R> x = g.param(*init_tokens);
    Var<R> x_loc = add(x, g.param(*loc_clip));
    return write_summ_(g, x, x_loc);
  }

  // Read: summarize [memory || map queries] down to Nc seed tokens.
  Var<R> read(Graph<R>& g, Var<R> mem, std::optional<Var<R>> qmap_flat, ReadInputs mode) const {
    require(mem.val().rank() == 2 && mem.val().dim(0) == cfg_.M && mem.val().dim(1) == cfg_.C,
            "memory read: memory shape mismatch");
    Var<R> mem_loc = add(mem, g.param(*loc_mem));
    if (mode == ReadInputs::memory_only || !qmap_flat) {
      return read_summ_(g, mem, mem_loc);
    }
    require(qmap_flat->val().dim(0) == cfg_.clip_query_tokens(),
            "memory read: map query token count mismatch");
    Var<R> q_loc = add(*qmap_flat, g.param(*loc_map));
    Var<R> x = concat_rows(std::vector<Var<R>>{mem, *qmap_flat});
    Var<R> x_loc = concat_rows(std::vector<Var<R>>{mem_loc, q_loc});
    return read_summ_(g, x, x_loc);
  }

  // Write: summarize [clip tokens || map tokens || old memory] (variants per
  // the ablation axis) down to M tokens.
  Var<R> write(Graph<R>& g, Var<R> clip_tokens, std::optional<Var<R>> map_flat, Var<R> mem,
               WriteInputs mode, std::optional<Var<R>> bev_pooled = std::nullopt) const {
    std::vector<Var<R>> xs{clip_tokens};
    std::vector<Var<R>> locs{add(clip_tokens, g.param(*loc_clip))};
    if (mode != WriteInputs::clip_only) {
      require(map_flat.has_value(), "memory write: map tokens required for this variant");
      xs.push_back(*map_flat);
      locs.push_back(add(*map_flat, g.param(*loc_map)));
    }
    if (mode == WriteInputs::clip_map_bev) {
      require(bev_pooled.has_value() && loc_bev != nullptr,
              "memory write: pooled BEV tokens required for this variant");
      require(bev_pooled->val().dim(0) == loc_bev->value.dim(0),
              "memory write: pooled BEV token count mismatch");
      xs.push_back(*bev_pooled);
      locs.push_back(add(*bev_pooled, g.param(*loc_bev)));
    }
    xs.push_back(mem);
    locs.push_back(add(mem, g.param(*loc_mem)));
    return write_summ_(g, concat_rows(xs), concat_rows(locs));
  }

  int64_t bev_pool_stride() const { return bev_pool_stride_; }

  std::shared_ptr<numerics::Parameter<R>> loc_mem, loc_clip, loc_map, loc_bev, init_tokens;

 private:
  ModelConfig cfg_;
  nn::TokenSummarizer<R> read_summ_, write_summ_;
  int64_t bev_pool_stride_ = 0;
};

}  // namespace mapclip::memory
