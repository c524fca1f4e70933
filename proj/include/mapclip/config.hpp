#pragma once

// One document holding every tunable of a run: model sizes, grid, loss
// weights, dataset generation, training schedule and ablation switches. A
// run is reproducible from its serialized config + dataset + seed.

#include <string>
#include <vector>

#include "mapclip/losses.hpp"
#include "mapclip/model_config.hpp"

namespace mapclip {

struct DataConfig {
  int train_scenes = 100;
  int val_scenes = 20;
  int num_frames = 11;
  double occlusion_density = 0.5;
  bool centerlines = false;
  int n_workers = 2;
};

struct TrainConfig {
  int steps = 600;
  double lr = 6e-4;
  double weight_decay = 0.01;
  double pretrain_fraction = 0.5;  // frame-level pretraining share of the budget
  int log_every = 10;
  int checkpoint_every = 0;  // 0: final checkpoint only
};

struct RunConfig {
  uint64_t seed = 1;
  ModelConfig model;
  AblationConfig ablation;
  losses::LossWeights weights;
  DataConfig data;
  TrainConfig train;
  std::vector<std::string> eval_splits{"standard", "occluded"};
  double stroke_width = 1.0;

  void validate() const;
  std::string to_json() const;
  static RunConfig from_json(const std::string& text);
  static RunConfig load(const std::string& path);
  void save(const std::string& path) const;

  // Short fingerprint of the serialized config, for report stamping.
  std::string config_id() const;

  // Paper-scale sizes for shape-contract checks.
  void apply_paper_scale();
};

const char* read_inputs_name(ReadInputs r);
ReadInputs read_inputs_from_name(const std::string& s);
const char* write_inputs_name(WriteInputs w);
WriteInputs write_inputs_from_name(const std::string& s);

}  // namespace mapclip
