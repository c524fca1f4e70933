#pragma once

// Training driver: frame-level pretraining followed by joint clip-level
// training, scene/window sampling, structured metric logs and checkpoints.

#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>

#include "mapclip/checkpoint.hpp"
#include "mapclip/config.hpp"
#include "mapclip/pipeline.hpp"

namespace mapclip::training {

using pipeline::FrameTargets;
using pipeline::Model;
using pipeline::StepRecord;

// The dense auxiliary substitution is announced in every training log: the
// perspective-view depth and segmentation terms require camera imagery,
// which this pipeline does not model.
inline constexpr const char* kSubstitutionNotice =
    "dense auxiliaries: depth and PV segmentation terms are replaced by the "
    "BEV segmentation auxiliary on both branches";

template <typename R>
struct TrainOutcome {
  std::unique_ptr<Model<R>> model;
  std::vector<double> step_losses;  // summed clip losses per step
  int pretrain_steps = 0;
};

inline std::vector<FrameTargets> precompute_targets(const synthworld::Dataset& ds,
                                                    double stroke_width,
                                                    std::vector<std::vector<int>>* index) {
  std::vector<FrameTargets> all;
  index->resize(ds.frames.size());
  for (size_t s = 0; s < ds.frames.size(); ++s) {
    (*index)[s].resize(ds.frames[s].size());
    for (size_t f = 0; f < ds.frames[s].size(); ++f) {
      (*index)[s][f] = static_cast<int>(all.size());
      all.push_back(pipeline::make_targets(ds.frames[s][f], ds.grid, stroke_width));
    }
  }
  return all;
}

// Deterministic scene sampler: a fresh seeded permutation per pass over the
// dataset.
class SceneSampler {
 public:
  SceneSampler(uint64_t seed, int n_scenes) : rng_(seed, "sampler"), n_(n_scenes) { reshuffle(); }

  int next() {
    if (pos_ >= order_.size()) reshuffle();
    return order_[pos_++];
  }

 private:
  void reshuffle() {
    order_.resize(static_cast<size_t>(n_));
    std::iota(order_.begin(), order_.end(), 0);
    for (size_t i = order_.size(); i > 1; --i)
      std::swap(order_[i - 1], order_[static_cast<size_t>(rng_.uniform_int(0, static_cast<int64_t>(i) - 1))]);
    pos_ = 0;
  }
  numerics::SeededStream rng_;
  int n_;
  std::vector<int> order_;
  size_t pos_ = 0;
};

// Window of three consecutive clips (fewer only if the scene is too short),
// chosen deterministically per step.
inline std::vector<std::vector<int>> sample_window(const pipeline::ClipSchedule& sched,
                                                   numerics::SeededStream& rng) {
  const int want = 3;
  const int n = static_cast<int>(sched.clips.size());
  const int take = std::min(want, n);
  const int max_start = n - take;
  int start = 0;
  if (max_start > 0) start = static_cast<int>(rng.uniform_int(0, max_start));
  std::vector<std::vector<int>> window;
  for (int k = 0; k < take; ++k) window.push_back(sched.clips[static_cast<size_t>(start + k)]);
  return window;
}

template <typename R>
TrainOutcome<R> run_training(const RunConfig& cfg, const synthworld::Dataset& train_ds,
                             const std::filesystem::path& run_dir,
                             const std::function<void(int, const StepRecord&)>& on_step = nullptr) {
  cfg.validate();
  require(!train_ds.frames.empty(), "run_training: empty dataset");

  const bool log_files = !run_dir.empty();
  std::ofstream metrics;
  if (log_files) {
    std::filesystem::create_directories(run_dir);
    cfg.save((run_dir / "config.json").string());
    metrics.open(run_dir / "metrics.jsonl");
    metrics << "{\"event\":\"start\",\"config_id\":\"" << cfg.config_id() << "\",\"note\":\""
            << kSubstitutionNotice << "\"}\n";
  }

  TrainOutcome<R> out;
  out.model = std::make_unique<Model<R>>(cfg.model, cfg.ablation, cfg.seed);
  const bool has_unveiler = cfg.ablation.intra_clip;
  out.pretrain_steps =
      has_unveiler ? static_cast<int>(std::lround(cfg.train.steps * cfg.train.pretrain_fraction)) : 0;

  nn::AdamW<R> opt;
  opt.lr = cfg.train.lr;
  opt.weight_decay = cfg.train.weight_decay;

  std::vector<std::vector<int>> target_index;
  const std::vector<FrameTargets> targets =
      precompute_targets(train_ds, cfg.stroke_width, &target_index);

  SceneSampler sampler(cfg.seed, static_cast<int>(train_ds.scenes.size()));
  numerics::SeededStream window_rng(cfg.seed, "windows");
  bool frozen_applied = false;

  for (int step = 0; step < cfg.train.steps; ++step) {
    const bool pretrain = step < out.pretrain_steps;
    if (!pretrain && cfg.ablation.freeze_framenet && !frozen_applied) {
      pipeline::freeze_framenet(*out.model);
      frozen_applied = true;
      if (log_files)
        metrics << "{\"event\":\"freeze\",\"step\":" << step << "}\n";
    }
    if (log_files && has_unveiler && step == out.pretrain_steps)
      metrics << "{\"event\":\"phase\",\"step\":" << step << ",\"phase\":\"main\"}\n";

    const int scene = sampler.next();
    const auto& frames = train_ds.frames[static_cast<size_t>(scene)];
    const pipeline::ClipSchedule sched =
        pipeline::make_clips(static_cast<int>(frames.size()), cfg.model.T, cfg.model.S);
    const auto window = sample_window(sched, window_rng);

    std::vector<const FrameTargets*> tp;
    for (size_t f = 0; f < frames.size(); ++f)
      tp.push_back(&targets[static_cast<size_t>(target_index[static_cast<size_t>(scene)][f])]);

    numerics::SeededStream dropout_rng(cfg.seed, "dropout/" + std::to_string(step));
    StepRecord rec = pipeline::train_step(*out.model, opt, frames, tp, window, cfg.weights,
                                          &dropout_rng, pretrain);
    out.step_losses.push_back(rec.total());

    if (log_files && (step % std::max(1, cfg.train.log_every) == 0 || step + 1 == cfg.train.steps)) {
      metrics << "{\"event\":\"step\",\"step\":" << step << ",\"phase\":\""
              << (pretrain ? "pretrain" : "main") << "\",\"scene\":" << scene << ",\"losses\":[";
      for (size_t k = 0; k < rec.clip_losses.size(); ++k)
        metrics << (k ? "," : "") << rec.clip_losses[k].total;
      metrics << "]}\n";
    }
    if (log_files && cfg.train.checkpoint_every > 0 && (step + 1) % cfg.train.checkpoint_every == 0)
      nn::save_params((run_dir / ("model_step" + std::to_string(step + 1) + ".ckpt")).string(),
                      out.model->params);
    if (on_step) on_step(step, rec);
  }

  if (log_files) {
    nn::save_params((run_dir / "model_final.ckpt").string(), out.model->params);
    metrics << "{\"event\":\"done\",\"steps\":" << cfg.train.steps << "}\n";
  }
  return out;
}

// Dataset generation per config: scene seeds derive from the run seed.
inline synthworld::Dataset make_dataset(const RunConfig& cfg, int n_scenes, uint64_t seed_base) {
  std::vector<synthworld::SceneSpec> specs;
  for (int i = 0; i < n_scenes; ++i) {
    synthworld::SceneSpec sp;
    sp.seed = seed_base + static_cast<uint64_t>(i);
    sp.num_frames = cfg.data.num_frames;
    sp.n_points = cfg.model.Np;
    sp.occlusion_density = cfg.data.occlusion_density;
    sp.centerlines = cfg.data.centerlines;
    sp.stroke_width = cfg.stroke_width;
    specs.push_back(sp);
  }
  return synthworld::build_dataset(specs, cfg.model.grid, cfg.data.n_workers);
}

}  // namespace mapclip::training
