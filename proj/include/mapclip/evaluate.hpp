#pragma once

// Dataset-level evaluation: run clip-level inference per scene, convert
// predictions to scored elements, and aggregate Chamfer-threshold AP per
// split (standard, heavy-occlusion, frame-drop).

#include <optional>
#include <sstream>

#include "mapclip/evalmetrics.hpp"
#include "mapclip/pipeline.hpp"

namespace mapclip::eval {

inline constexpr double kDefaultOcclusionRadius = 2.5;

struct SplitSpec {
  enum class Kind { standard, occluded, drop } kind = Kind::standard;
  double drop_rate = 0.0;
  double occlusion_radius = kDefaultOcclusionRadius;

  std::string name() const {
    switch (kind) {
      case Kind::standard: return "standard";
      case Kind::occluded: return "occluded";
      case Kind::drop: {
        std::ostringstream os;
        os << "drop:" << drop_rate;
        return os.str();
      }
    }
    return "standard";
  }

  // Parses "standard", "occluded" or "drop:RATE".
  static SplitSpec parse(const std::string& text) {
    SplitSpec s;
    if (text == "standard") {
      s.kind = Kind::standard;
    } else if (text == "occluded") {
      s.kind = Kind::occluded;
    } else if (text.rfind("drop:", 0) == 0) {
      s.kind = Kind::drop;
      s.drop_rate = std::stod(text.substr(5));
      require_config(s.drop_rate >= 0.0 && s.drop_rate <= 1.0, "split: drop rate must lie in [0,1]");
    } else {
      throw ConfigError("unknown split spec: " + text + " (use standard|occluded|drop:RATE)");
    }
    return s;
  }
};

inline int64_t frame_key(int scene, int frame) { return static_cast<int64_t>(scene) * 100000 + frame; }

// Convert one frame's prediction into scored elements: category = argmax
// over the class logits, dropped when "no object" wins.
inline void collect_preds(const pipeline::MapPrediction& pred, int scene, int frame,
                          std::vector<ScoredPred>& out) {
  const int kc = static_cast<int>(pred.probs.empty() ? 0 : pred.probs[0].size());
  for (size_t i = 0; i < pred.probs.size(); ++i) {
    int best = 0;
    for (int k = 1; k < kc; ++k)
      if (pred.probs[i][static_cast<size_t>(k)] > pred.probs[i][static_cast<size_t>(best)]) best = k;
    if (best == kc - 1) continue;  // no object
    ScoredPred sp;
    sp.frame_key = frame_key(scene, frame);
    sp.category = static_cast<geometry::Category>(best);
    sp.score = pred.probs[i][static_cast<size_t>(best)];
    sp.points = pred.points_m[i];
    out.push_back(std::move(sp));
  }
}

inline void collect_gts(const synthworld::FrameObservation& obs, int scene, int frame,
                        std::vector<GtElement>& out) {
  for (const auto& el : obs.full_gt) {
    GtElement g;
    g.frame_key = frame_key(scene, frame);
    g.category = el.category;
    g.points = el.points;
    out.push_back(std::move(g));
  }
}

struct EvaluateOptions {
  std::vector<double> thresholds{0.5, 1.0, 1.5};
  uint64_t drop_seed = 1;
  std::string model_id, config_id;
};

// Evaluate one split. Drop splits re-run inference on corrupted sequences;
// the occluded split selects frames within the pass radius.
template <typename R>
EvalReport evaluate_split(const pipeline::Model<R>& model, const synthworld::Dataset& ds,
                          const SplitSpec& split, const EvaluateOptions& opts = {}) {
  std::vector<ScoredPred> preds;
  std::vector<GtElement> gts;
  int n_frames = 0;

  std::vector<synthworld::FrameRef> selected;
  if (split.kind == SplitSpec::Kind::occluded) {
    selected = synthworld::occlusion_split(ds, split.occlusion_radius);
  } else {
    for (size_t s = 0; s < ds.frames.size(); ++s)
      for (size_t f = 0; f < ds.frames[s].size(); ++f)
        selected.push_back({static_cast<int>(s), static_cast<int>(f) + 1});
  }
  std::vector<std::vector<bool>> keep(ds.frames.size());
  for (size_t s = 0; s < ds.frames.size(); ++s) keep[s].assign(ds.frames[s].size(), false);
  for (const auto& fr : selected) keep[static_cast<size_t>(fr.scene)][static_cast<size_t>(fr.frame - 1)] = true;

  for (size_t s = 0; s < ds.frames.size(); ++s) {
    bool any = false;
    for (bool k : keep[s]) any = any || k;
    if (!any) continue;
    const std::vector<synthworld::FrameObservation>* frames = &ds.frames[s];
    std::vector<synthworld::FrameObservation> dropped;
    if (split.kind == SplitSpec::Kind::drop && split.drop_rate > 0.0) {
      dropped = pipeline::frame_drop(*frames, split.drop_rate, opts.drop_seed + s);
      frames = &dropped;
    }
    auto res = pipeline::run_sequence(model, *frames);
    for (size_t f = 0; f < frames->size(); ++f) {
      if (!keep[s][f]) continue;
      ++n_frames;
      collect_preds(res.per_frame[f], static_cast<int>(s), static_cast<int>(f) + 1, preds);
      collect_gts(ds.frames[s][f], static_cast<int>(s), static_cast<int>(f) + 1, gts);
    }
  }

  EvalReport rep = compute_report(preds, gts, opts.thresholds, split.name());
  rep.n_frames = n_frames;
  rep.model_id = opts.model_id;
  rep.config_id = opts.config_id;
  return rep;
}

template <typename R>
std::vector<EvalReport> evaluate(const pipeline::Model<R>& model, const synthworld::Dataset& ds,
                                 const std::vector<SplitSpec>& splits,
                                 const EvaluateOptions& opts = {}) {
  std::vector<EvalReport> out;
  for (const auto& s : splits) out.push_back(evaluate_split(model, ds, s, opts));
  return out;
}

}  // namespace mapclip::eval
