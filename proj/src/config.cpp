#include "mapclip/config.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"

#include "mapclip/rng.hpp"

namespace mapclip {

const char* read_inputs_name(ReadInputs r) {
  return r == ReadInputs::memory_only ? "memory" : "memory_qmap";
}

ReadInputs read_inputs_from_name(const std::string& s) {
  if (s == "memory") return ReadInputs::memory_only;
  if (s == "memory_qmap") return ReadInputs::memory_and_queries;
  throw ConfigError("unknown read-inputs variant: " + s + " (use memory|memory_qmap)");
}

const char* write_inputs_name(WriteInputs w) {
  switch (w) {
    case WriteInputs::clip_only: return "clip";
    case WriteInputs::clip_and_map: return "clip_map";
    case WriteInputs::clip_map_bev: return "clip_map_bev";
  }
  return "clip_map";
}

WriteInputs write_inputs_from_name(const std::string& s) {
  if (s == "clip") return WriteInputs::clip_only;
  if (s == "clip_map") return WriteInputs::clip_and_map;
  if (s == "clip_map_bev") return WriteInputs::clip_map_bev;
  throw ConfigError("unknown write-inputs variant: " + s + " (use clip|clip_map|clip_map_bev)");
}

void RunConfig::validate() const {
  model.validate();
  ablation.validate();
  require_config(data.train_scenes >= 1 && data.val_scenes >= 0, "config: scene counts invalid");
  require_config(data.num_frames >= model.T, "config: scenes must hold at least one clip");
  require_config(data.occlusion_density >= 0.0 && data.occlusion_density <= 1.0,
                 "config: occlusion density must lie in [0,1]");
  require_config(train.steps >= 1, "config: steps must be >= 1");
  require_config(train.pretrain_fraction >= 0.0 && train.pretrain_fraction < 1.0,
                 "config: pretrain fraction must lie in [0,1)");
  require_config(stroke_width > 0.0, "config: stroke width must be positive");
}

std::string RunConfig::to_json() const {
  nlohmann::json j;
  j["seed"] = seed;
  j["model"] = {{"C", model.C},
                {"T", model.T},
                {"S", model.S},
                {"L", model.L},
                {"M", model.M},
                {"Nc", model.Nc},
                {"Ni", model.Ni},
                {"Np", model.Np},
                {"heads", model.heads},
                {"ffn_mult", model.ffn_mult},
                {"dec_layers", model.dec_layers},
                {"deform_points", model.deform_points},
                {"dropout_p", model.dropout_p},
                {"pos_in_values", model.pos_in_values},
                {"grid", {{"h", model.grid.h},
                          {"w", model.grid.w},
                          {"x_extent", model.grid.x_extent},
                          {"y_extent", model.grid.y_extent}}}};
  j["ablation"] = {{"intra_clip", ablation.intra_clip},
                   {"inter_clip", ablation.inter_clip},
                   {"read_inputs", read_inputs_name(ablation.read_inputs)},
                   {"write_inputs", write_inputs_name(ablation.write_inputs)},
                   {"freeze_framenet", ablation.freeze_framenet}};
  j["weights"] = {{"cls_m", weights.cls_m}, {"p2p_m", weights.p2p_m}, {"dir_m", weights.dir_m},
                  {"seg_m", weights.seg_m}, {"cls_f", weights.cls_f}, {"p2p_f", weights.p2p_f},
                  {"dir_f", weights.dir_f}, {"bev_f", weights.bev_f}, {"depth_f", weights.depth_f},
                  {"pvseg_f", weights.pvseg_f}, {"focal_alpha", weights.focal_alpha}};
  j["data"] = {{"train_scenes", data.train_scenes}, {"val_scenes", data.val_scenes},
               {"num_frames", data.num_frames}, {"occlusion_density", data.occlusion_density},
               {"centerlines", data.centerlines}, {"n_workers", data.n_workers}};
  j["train"] = {{"steps", train.steps}, {"lr", train.lr}, {"weight_decay", train.weight_decay},
                {"pretrain_fraction", train.pretrain_fraction}, {"log_every", train.log_every},
                {"checkpoint_every", train.checkpoint_every}};
  j["eval_splits"] = eval_splits;
  j["stroke_width"] = stroke_width;
  return j.dump(2);
}

RunConfig RunConfig::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  RunConfig c;
  try {
    c.seed = j.value("seed", c.seed);
    if (j.contains("model")) {
      const auto& m = j["model"];
      c.model.C = m.value("C", c.model.C);
      c.model.T = m.value("T", c.model.T);
      c.model.S = m.value("S", c.model.S);
      c.model.L = m.value("L", c.model.L);
      c.model.M = m.value("M", c.model.M);
      c.model.Nc = m.value("Nc", c.model.Nc);
      c.model.Ni = m.value("Ni", c.model.Ni);
      c.model.Np = m.value("Np", c.model.Np);
      c.model.heads = m.value("heads", c.model.heads);
      c.model.ffn_mult = m.value("ffn_mult", c.model.ffn_mult);
      c.model.dec_layers = m.value("dec_layers", c.model.dec_layers);
      c.model.deform_points = m.value("deform_points", c.model.deform_points);
      c.model.dropout_p = m.value("dropout_p", c.model.dropout_p);
      c.model.pos_in_values = m.value("pos_in_values", c.model.pos_in_values);
      if (m.contains("grid")) {
        const auto& g = m["grid"];
        c.model.grid.h = g.value("h", c.model.grid.h);
        c.model.grid.w = g.value("w", c.model.grid.w);
        c.model.grid.x_extent = g.value("x_extent", c.model.grid.x_extent);
        c.model.grid.y_extent = g.value("y_extent", c.model.grid.y_extent);
      }
    }
    if (j.contains("ablation")) {
      const auto& a = j["ablation"];
      c.ablation.intra_clip = a.value("intra_clip", c.ablation.intra_clip);
      c.ablation.inter_clip = a.value("inter_clip", c.ablation.inter_clip);
      if (a.contains("read_inputs"))
        c.ablation.read_inputs = read_inputs_from_name(a["read_inputs"].get<std::string>());
      if (a.contains("write_inputs"))
        c.ablation.write_inputs = write_inputs_from_name(a["write_inputs"].get<std::string>());
      c.ablation.freeze_framenet = a.value("freeze_framenet", c.ablation.freeze_framenet);
    }
    if (j.contains("weights")) {
      const auto& w = j["weights"];
      c.weights.cls_m = w.value("cls_m", c.weights.cls_m);
      c.weights.p2p_m = w.value("p2p_m", c.weights.p2p_m);
      c.weights.dir_m = w.value("dir_m", c.weights.dir_m);
      c.weights.seg_m = w.value("seg_m", c.weights.seg_m);
      c.weights.cls_f = w.value("cls_f", c.weights.cls_f);
      c.weights.p2p_f = w.value("p2p_f", c.weights.p2p_f);
      c.weights.dir_f = w.value("dir_f", c.weights.dir_f);
      c.weights.bev_f = w.value("bev_f", c.weights.bev_f);
      c.weights.depth_f = w.value("depth_f", c.weights.depth_f);
      c.weights.pvseg_f = w.value("pvseg_f", c.weights.pvseg_f);
      c.weights.focal_alpha = w.value("focal_alpha", c.weights.focal_alpha);
    }
    if (j.contains("data")) {
      const auto& d = j["data"];
      c.data.train_scenes = d.value("train_scenes", c.data.train_scenes);
      c.data.val_scenes = d.value("val_scenes", c.data.val_scenes);
      c.data.num_frames = d.value("num_frames", c.data.num_frames);
      c.data.occlusion_density = d.value("occlusion_density", c.data.occlusion_density);
      c.data.centerlines = d.value("centerlines", c.data.centerlines);
      c.data.n_workers = d.value("n_workers", c.data.n_workers);
    }
    if (j.contains("train")) {
      const auto& t = j["train"];
      c.train.steps = t.value("steps", c.train.steps);
      c.train.lr = t.value("lr", c.train.lr);
      c.train.weight_decay = t.value("weight_decay", c.train.weight_decay);
      c.train.pretrain_fraction = t.value("pretrain_fraction", c.train.pretrain_fraction);
      c.train.log_every = t.value("log_every", c.train.log_every);
      c.train.checkpoint_every = t.value("checkpoint_every", c.train.checkpoint_every);
    }
    if (j.contains("eval_splits")) c.eval_splits = j["eval_splits"].get<std::vector<std::string>>();
    c.stroke_width = j.value("stroke_width", c.stroke_width);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: invalid field: ") + e.what());
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream is(path);
  if (!is.good()) throw ConfigError("config file not found: " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return from_json(ss.str());
}

void RunConfig::save(const std::string& path) const {
  std::ofstream os(path);
  require(os.good(), "cannot write config to " + path);
  os << to_json() << "\n";
}

std::string RunConfig::config_id() const {
  const std::string text = to_json();
  const uint64_t h = numerics::fnv1a64(text);
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void RunConfig::apply_paper_scale() {
  const ModelConfig p = ModelConfig::paper_scale();
  model.C = p.C;
  model.M = p.M;
  model.Nc = p.Nc;
  model.Ni = p.Ni;
  model.Np = p.Np;
  model.grid = p.grid;
}

}  // namespace mapclip
