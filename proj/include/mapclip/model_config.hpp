#pragma once

#include "mapclip/common.hpp"
#include "mapclip/geometry.hpp"
#include "mapclip/rng.hpp"

namespace mapclip {

// Architecture sizes shared by the frame network, the unveiler and the
// token memory. Desk-scale defaults; --paper-scale swaps in the full sizes
// for shape-contract checks.
struct ModelConfig {
  int C = 64;    // embedding width
  int T = 3;     // frames per clip
  int S = 2;     // clip stride
  int L = 2;     // intra-clip unveiler layers
  int M = 32;    // memory tokens
  int Nc = 16;   // clip tokens
  int Ni = 12;   // map element slots
  int Np = 10;   // points per element
  int heads = 4;
  int ffn_mult = 2;
  int dec_layers = 2;     // frame-level decoder depth
  int deform_points = 4;  // sampling points per attention head
  double dropout_p = 0.1;
  bool pos_in_values = true;  // token position encodings added to v as well as k
  geometry::BevGridSpec grid;

  int n_classes = geometry::kNumCategories;  // heads emit n_classes + 1 logits

  int tokens_per_frame() const { return Ni * Np; }
  int clip_query_tokens() const { return T * Ni * Np; }

  void validate() const {
    grid.validate();
    require_config(C >= 8 && C % heads == 0, "model: C must be >= 8 and divisible by heads");
    require_config(T >= 1 && S >= 1 && S <= T, "model: need 1 <= S <= T");
    require_config(L >= 1 && dec_layers >= 1, "model: layer counts must be >= 1");
    require_config(M >= 1 && Nc >= 1 && Ni >= 1 && Np >= 2, "model: token sizes invalid");
    require_config(deform_points >= 1 && ffn_mult >= 1, "model: attention sizes invalid");
    require_config(dropout_p >= 0.0 && dropout_p < 1.0, "model: dropout must lie in [0,1)");
  }

  static ModelConfig paper_scale() {
    ModelConfig c;
    c.C = 256;
    c.M = 96;
    c.Nc = 50;
    c.Ni = 50;
    c.Np = 20;
    c.grid.h = 100;
    c.grid.w = 200;
    return c;
  }
};

enum class ReadInputs { memory_only, memory_and_queries };
enum class WriteInputs { clip_only, clip_and_map, clip_map_bev };

// Module on/off switches and the read/write input variants (the ablation
// axes exposed by the CLI).
struct AblationConfig {
  bool intra_clip = true;
  bool inter_clip = true;
  ReadInputs read_inputs = ReadInputs::memory_and_queries;
  WriteInputs write_inputs = WriteInputs::clip_and_map;
  bool freeze_framenet = false;

  void validate() const {
    require_config(intra_clip || !inter_clip, "ablation: inter-clip requires intra-clip");
  }
};

// Dropout context threaded through forward passes; a null stream disables
// dropout (inference / gradient checks).
struct DropoutCtx {
  double p = 0.0;
  mapclip::numerics::SeededStream* rng = nullptr;
};

}  // namespace mapclip
