// Command-line entry point: dataset generation, training, evaluation,
// inference, plotting and ablation sweeps over the clip-level map
// construction pipeline.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"

#include "mapclip/checkpoint.hpp"
#include "mapclip/config.hpp"
#include "mapclip/evaluate.hpp"
#include "mapclip/plotting.hpp"
#include "mapclip/training.hpp"

namespace fs = std::filesystem;
using namespace mapclip;

namespace {

using Real = float;  // training/inference precision; 64-bit is for gradient checks

fs::path resolve_out(const fs::path& p) {
  if (p.is_absolute()) return p;
  if (const char* root = std::getenv("MAPCLIP_RUN_ROOT")) return fs::path(root) / p;
  return p;
}

synthworld::Dataset load_split_dir(const fs::path& data, const std::string& sub) {
  if (fs::exists(data / sub / "manifest.json")) return synthworld::import_dataset(data / sub);
  if (fs::exists(data / "manifest.json")) return synthworld::import_dataset(data);
  throw FormatError("dataset not found under " + data.string() + " (missing manifest.json)");
}

RunConfig load_config_for_ckpt(const fs::path& ckpt, const std::string& config_override) {
  if (!config_override.empty()) return RunConfig::load(config_override);
  const fs::path sibling = ckpt.parent_path() / "config.json";
  if (fs::exists(sibling)) return RunConfig::load(sibling.string());
  throw ConfigError("no config.json next to " + ckpt.string() + "; pass --config");
}

std::unique_ptr<pipeline::Model<Real>> load_model(const RunConfig& cfg, const fs::path& ckpt) {
  auto model = std::make_unique<pipeline::Model<Real>>(cfg.model, cfg.ablation, cfg.seed);
  nn::load_params(ckpt, model->params);
  if (cfg.ablation.freeze_framenet) pipeline::freeze_framenet(*model);
  return model;
}

int cmd_gen_data(const std::string& config_path, const std::string& out, bool paper_scale) {
  RunConfig cfg = config_path.empty() ? RunConfig{} : RunConfig::load(config_path);
  if (paper_scale) cfg.apply_paper_scale();
  cfg.validate();
  const fs::path dir = resolve_out(out);
  std::cout << "generating " << cfg.data.train_scenes << " train / " << cfg.data.val_scenes
            << " val scenes (density " << cfg.data.occlusion_density << ")\n";
  auto train = training::make_dataset(cfg, cfg.data.train_scenes, cfg.seed * 1000 + 1);
  synthworld::export_dataset(train, dir / "train");
  if (cfg.data.val_scenes > 0) {
    auto val = training::make_dataset(cfg, cfg.data.val_scenes, cfg.seed * 1000 + 500001);
    synthworld::export_dataset(val, dir / "val");
  }
  cfg.save((dir / "dataset_config.json").string());
  std::cout << "dataset written to " << dir << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data, const std::string& out,
              bool paper_scale) {
  RunConfig cfg = config_path.empty() ? RunConfig{} : RunConfig::load(config_path);
  if (paper_scale) cfg.apply_paper_scale();
  cfg.validate();
  const fs::path run_dir = resolve_out(out);
  auto train_ds = load_split_dir(data, "train");
  std::cout << training::kSubstitutionNotice << "\n";
  std::cout << "training " << cfg.train.steps << " steps on " << train_ds.scenes.size()
            << " scenes -> " << run_dir << "\n";
  auto outcome = training::run_training<Real>(cfg, train_ds, run_dir, [](int step, const pipeline::StepRecord& rec) {
    if (step % 25 == 0) std::cout << "step " << step << " loss " << rec.total() << "\n";
  });
  std::cout << "final step loss " << outcome.step_losses.back() << "\n";
  std::cout << "checkpoint: " << (run_dir / "model_final.ckpt") << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data, std::vector<std::string> splits,
             const std::string& config_override, const std::string& out) {
  const fs::path ckpt_path(ckpt);
  RunConfig cfg = load_config_for_ckpt(ckpt_path, config_override);
  auto model = load_model(cfg, ckpt_path);
  auto val_ds = load_split_dir(data, "val");
  if (splits.empty()) splits = cfg.eval_splits;
  eval::EvaluateOptions opts;
  opts.model_id = ckpt_path.filename().string();
  opts.config_id = cfg.config_id();
  const fs::path out_dir = resolve_out(out.empty() ? ckpt_path.parent_path().string() : out);
  fs::create_directories(out_dir);
  for (const auto& s : splits) {
    const auto spec = eval::SplitSpec::parse(s);
    const auto report = eval::evaluate_split(*model, val_ds, spec, opts);
    std::cout << report.to_text() << "\n";
    std::string stem = "report_" + spec.name();
    for (auto& c : stem)
      if (c == ':' || c == '.') c = '_';
    std::ofstream jf(out_dir / (stem + ".json"));
    jf << report.to_json() << "\n";
    std::ofstream tf(out_dir / (stem + ".txt"));
    tf << report.to_text();
  }
  return 0;
}

int cmd_infer(const std::string& ckpt, const std::string& data, int scene_index,
              const std::string& out, const std::string& config_override,
              const std::string& memory_out) {
  const fs::path ckpt_path(ckpt);
  RunConfig cfg = load_config_for_ckpt(ckpt_path, config_override);
  auto model = load_model(cfg, ckpt_path);
  auto ds = load_split_dir(data, "val");
  require_config(scene_index >= 0 && scene_index < static_cast<int>(ds.frames.size()),
                 "infer: scene index out of range");
  auto res = pipeline::run_sequence(*model, ds.frames[static_cast<size_t>(scene_index)]);

  std::ofstream os(resolve_out(out));
  require(os.good(), "infer: cannot write " + out);
  std::vector<geometry::ElementRecord> recs;
  for (size_t f = 0; f < res.per_frame.size(); ++f) {
    std::vector<eval::ScoredPred> preds;
    eval::collect_preds(res.per_frame[f], scene_index, static_cast<int>(f) + 1, preds);
    for (const auto& p : preds) {
      geometry::ElementRecord r;
      r.element.category = p.category;
      r.element.closed = p.category == geometry::Category::pedestrian_crossing;
      r.element.points = p.points;
      r.frame = static_cast<int>(f) + 1;
      r.score = p.score;
      recs.push_back(std::move(r));
    }
  }
  geometry::write_elements_jsonl(os, recs);
  std::cout << "wrote " << recs.size() << " predicted elements for scene " << scene_index << "\n";
  if (!memory_out.empty() && !res.memory_trace.empty()) {
    std::map<std::string, numerics::Tensor<Real>> snap{
        {"memory", res.memory_trace.back().values}};
    nn::save_named_tensors(resolve_out(memory_out), snap);
    std::cout << "memory snapshot: " << memory_out << "\n";
  }
  return 0;
}

int cmd_plot(const std::string& run, const std::string& data, int scene_index,
             const std::string& out) {
  const fs::path run_dir(run);
  RunConfig cfg = RunConfig::load((run_dir / "config.json").string());
  auto model = load_model(cfg, run_dir / "model_final.ckpt");
  auto ds = load_split_dir(data, "val");
  require_config(scene_index >= 0 && scene_index < static_cast<int>(ds.frames.size()),
                 "plot: scene index out of range");
  const fs::path out_dir = resolve_out(out.empty() ? (run_dir / "plots").string() : out);
  fs::create_directories(out_dir);

  const auto& frames = ds.frames[static_cast<size_t>(scene_index)];
  auto res = pipeline::run_sequence(*model, frames);

  // Per-frame overlays: ground truth solid, predictions dashed.
  for (size_t f = 0; f < frames.size(); ++f) {
    std::vector<plotting::OverlayElement> els;
    for (const auto& gt : frames[f].full_gt) els.push_back({gt, -1.0});
    std::vector<eval::ScoredPred> preds;
    eval::collect_preds(res.per_frame[f], scene_index, static_cast<int>(f) + 1, preds);
    for (const auto& p : preds) {
      geometry::PolylineElement el;
      el.category = p.category;
      el.closed = p.category == geometry::Category::pedestrian_crossing;
      el.points = p.points;
      els.push_back({el, p.score});
    }
    char name[64];
    std::snprintf(name, sizeof(name), "overlay_frame_%02zu.svg", f + 1);
    plotting::svg_map_overlay(out_dir / name, cfg.model.grid, els,
                              "frame " + std::to_string(f + 1) + " (gt solid / pred dashed)");
  }

  // BEV feature PCA before/after unveiling for the first clip.
  {
    numerics::Graph<Real> g;
    g.set_recording(false);
    const int t_frames = std::min(cfg.model.T, static_cast<int>(frames.size()));
    std::vector<pipeline::FrameVars<Real>> fv;
    for (int t = 0; t < t_frames; ++t)
      fv.push_back(pipeline::run_framenet(g, *model, frames[static_cast<size_t>(t)], DropoutCtx{}));
    for (int t = 0; t < t_frames; ++t) {
      auto before = fv[static_cast<size_t>(t)].bev.val().template cast<float>();
      char name[64];
      std::snprintf(name, sizeof(name), "bev_pca_before_f%02d.pgm", t + 1);
      plotting::pgm_image(out_dir / name, plotting::pca_project(before));
    }
    if (model->abl.intra_clip) {
      std::optional<numerics::Var<Real>> mem;
      if (model->abl.inter_clip) mem = model->mem->init_memory(g);
      auto clip_res = pipeline::run_clip(g, *model, std::move(fv), mem, DropoutCtx{});
      if (clip_res.clip) {
        const auto& updated = clip_res.clip->layers.back().bev_updated;
        for (size_t t = 0; t < updated.size(); ++t) {
          auto after = updated[t].val().template cast<float>();
          char name[64];
          std::snprintf(name, sizeof(name), "bev_pca_after_f%02zu.pgm", t + 1);
          plotting::pgm_image(out_dir / name, plotting::pca_project(after));
        }
      }
    }
  }

  // PR curves on this dataset (standard split).
  {
    std::vector<eval::ScoredPred> preds;
    std::vector<eval::GtElement> gts;
    for (size_t s = 0; s < ds.frames.size(); ++s) {
      auto seq = pipeline::run_sequence(*model, ds.frames[s]);
      for (size_t f = 0; f < ds.frames[s].size(); ++f) {
        eval::collect_preds(seq.per_frame[f], static_cast<int>(s), static_cast<int>(f) + 1, preds);
        eval::collect_gts(ds.frames[s][f], static_cast<int>(s), static_cast<int>(f) + 1, gts);
      }
    }
    std::vector<std::pair<std::string, std::vector<plotting::PrPoint>>> curves;
    for (int c = 0; c < geometry::kNumCategories; ++c) {
      const auto cat = static_cast<geometry::Category>(c);
      std::vector<eval::ScoredPred> cp;
      std::vector<eval::GtElement> cg;
      for (const auto& p : preds)
        if (p.category == cat) cp.push_back(p);
      for (const auto& gt : gts)
        if (gt.category == cat) cg.push_back(gt);
      if (cg.empty()) continue;
      curves.emplace_back(geometry::category_name(cat), plotting::pr_points(cp, cg, 1.0));
    }
    if (!curves.empty())
      plotting::svg_pr_curves(out_dir / "pr_curves.svg", curves, "PR at 1.0 m Chamfer");
  }

  // Ablation bar chart when a sweep table is present.
  const fs::path csv = run_dir / "ablation.csv";
  if (fs::exists(csv)) {
    std::ifstream is(csv);
    std::string line;
    std::getline(is, line);  // header
    std::vector<std::pair<std::string, double>> bars;
    while (std::getline(is, line)) {
      const auto comma = line.find(',');
      const auto last = line.rfind(',');
      if (comma == std::string::npos || last == comma) continue;
      bars.emplace_back(line.substr(0, comma), std::stod(line.substr(last + 1)));
    }
    if (!bars.empty()) plotting::svg_bar_chart(out_dir / "ablation.svg", bars, "ablation mAP");
  }
  std::cout << "plots written to " << out_dir << "\n";
  return 0;
}

struct AblationPoint {
  std::string label;
  RunConfig cfg;
};

std::vector<AblationPoint> make_ablation_points(const std::string& axis, const std::string& grid,
                                                const RunConfig& base) {
  std::vector<std::string> values;
  {
    std::stringstream ss(grid);
    std::string item;
    while (std::getline(ss, item, ';'))
      if (!item.empty()) values.push_back(item);
  }
  auto default_grid = [&]() -> std::vector<std::string> {
    if (axis == "modules") return {"frame", "intra", "full"};
    if (axis == "read") return {"memory", "memory_qmap"};
    if (axis == "write") return {"none", "clip", "clip_map", "clip_map_bev"};
    if (axis == "T_S") return {"1,1", "3,1", "3,2", "3,3"};
    if (axis == "M") return {"8", "16", "32", "64"};
    if (axis == "N_c") return {"8", "16", "32"};
    if (axis == "freeze") return {"frozen", "e2e"};
    throw ConfigError("unknown ablation axis: " + axis +
                      " (use modules|read|write|T_S|M|N_c|freeze)");
  };
  if (values.empty()) values = default_grid();

  std::vector<AblationPoint> points;
  for (const auto& v : values) {
    AblationPoint p{axis + "=" + v, base};
    if (axis == "modules") {
      if (v == "frame") {
        p.cfg.ablation.intra_clip = false;
        p.cfg.ablation.inter_clip = false;
      } else if (v == "intra") {
        p.cfg.ablation.intra_clip = true;
        p.cfg.ablation.inter_clip = false;
      } else if (v == "full") {
        p.cfg.ablation.intra_clip = true;
        p.cfg.ablation.inter_clip = true;
      } else {
        throw ConfigError("modules axis: use frame|intra|full, got " + v);
      }
    } else if (axis == "read") {
      p.cfg.ablation.read_inputs = read_inputs_from_name(v);
    } else if (axis == "write") {
      if (v == "none") {
        p.cfg.ablation.inter_clip = false;
      } else {
        p.cfg.ablation.inter_clip = true;
        p.cfg.ablation.write_inputs = write_inputs_from_name(v);
      }
    } else if (axis == "T_S") {
      const auto comma = v.find(',');
      require_config(comma != std::string::npos, "T_S axis values look like T,S");
      p.cfg.model.T = std::stoi(v.substr(0, comma));
      p.cfg.model.S = std::stoi(v.substr(comma + 1));
    } else if (axis == "M") {
      p.cfg.model.M = std::stoi(v);
    } else if (axis == "N_c") {
      p.cfg.model.Nc = std::stoi(v);
    } else if (axis == "freeze") {
      if (v == "frozen") p.cfg.ablation.freeze_framenet = true;
      else if (v == "e2e") p.cfg.ablation.freeze_framenet = false;
      else throw ConfigError("freeze axis: use frozen|e2e, got " + v);
    }
    p.cfg.validate();
    points.push_back(std::move(p));
  }
  return points;
}

int cmd_ablate(const std::string& axis, const std::string& grid, const std::string& config_path,
               const std::string& data, const std::string& out) {
  RunConfig base = config_path.empty() ? RunConfig{} : RunConfig::load(config_path);
  base.validate();
  const fs::path out_dir = resolve_out(out);
  fs::create_directories(out_dir);
  auto train_ds = load_split_dir(data, "train");
  auto val_ds = load_split_dir(data, "val");

  const auto points = make_ablation_points(axis, grid, base);
  std::vector<std::pair<std::string, eval::EvalReport>> rows;
  for (const auto& p : points) {
    std::cout << "=== " << p.label << " ===\n";
    std::string sub = p.label;
    for (auto& c : sub)
      if (c == '=' || c == ',' || c == ':') c = '_';
    auto outcome = training::run_training<Real>(p.cfg, train_ds, out_dir / sub);
    eval::EvaluateOptions opts;
    opts.model_id = p.label;
    opts.config_id = p.cfg.config_id();
    auto report = eval::evaluate_split(*outcome.model, val_ds, eval::SplitSpec{}, opts);
    std::cout << report.to_text() << "\n";
    rows.emplace_back(p.label, std::move(report));
  }
  const std::string table = eval::comparison_table(rows);
  const std::string csv = eval::comparison_csv(rows);
  std::cout << table;
  std::ofstream(out_dir / "ablation.txt") << table;
  std::ofstream(out_dir / "ablation.csv") << csv;
  std::cout << "ablation table written to " << (out_dir / "ablation.txt") << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"clip-level vectorized map construction on a synthetic occluded world"};
  app.require_subcommand(1);
  bool paper_scale = false;
  app.add_flag("--paper-scale", paper_scale,
               "use full-paper model sizes (shape checks only; far too slow to train)");

  std::string config_path, data, out, ckpt, memory_out, axis, grid, config_override;
  std::vector<std::string> splits;
  int scene_index = 0;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  gen->add_option("--config", config_path, "run config JSON (defaults used when omitted)");
  gen->add_option("--out", out, "output dataset directory")->required();

  auto* train = app.add_subcommand("train", "train a model");
  train->add_option("--config", config_path, "run config JSON");
  train->add_option("--data", data, "dataset directory (train/ subdir or root)")->required();
  train->add_option("--out", out, "run directory")->required();

  auto* evalc = app.add_subcommand("eval", "evaluate a checkpoint");
  evalc->add_option("--ckpt", ckpt, "checkpoint file")->required();
  evalc->add_option("--data", data, "dataset directory (val/ subdir or root)")->required();
  evalc->add_option("--split", splits, "splits: standard | occluded | drop:RATE");
  evalc->add_option("--config", config_override, "config override (default: next to ckpt)");
  evalc->add_option("--out", out, "report directory (default: next to ckpt)");

  auto* infer = app.add_subcommand("infer", "run inference on one scene");
  infer->add_option("--ckpt", ckpt, "checkpoint file")->required();
  infer->add_option("--data", data, "dataset directory")->required();
  infer->add_option("--scene", scene_index, "scene index")->required();
  infer->add_option("--out", out, "output polyline JSONL")->required();
  infer->add_option("--config", config_override, "config override");
  infer->add_option("--memory-out", memory_out, "write the final memory snapshot here");

  auto* plot = app.add_subcommand("plot", "emit figures for a run");
  plot->add_option("--run", out, "run directory")->required();
  plot->add_option("--data", data, "dataset directory")->required();
  plot->add_option("--scene", scene_index, "scene index for overlays");
  std::string plot_out;
  plot->add_option("--out", plot_out, "figure directory (default RUN/plots)");

  auto* ablate = app.add_subcommand("ablate", "train and evaluate along an ablation axis");
  ablate->add_option("--axis", axis, "modules|read|write|T_S|M|N_c|freeze")->required();
  ablate->add_option("--grid", grid, "semicolon-separated values (default: per-axis grid)");
  ablate->add_option("--config", config_path, "base run config JSON");
  ablate->add_option("--data", data, "dataset directory")->required();
  ablate->add_option("--out", out, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_data(config_path, out, paper_scale);
    if (train->parsed()) return cmd_train(config_path, data, out, paper_scale);
    if (evalc->parsed()) return cmd_eval(ckpt, data, splits, config_override, out);
    if (infer->parsed()) return cmd_infer(ckpt, data, scene_index, out, config_override, memory_out);
    if (plot->parsed()) return cmd_plot(out, data, scene_index, plot_out);
    if (ablate->parsed()) return cmd_ablate(axis, grid, config_path, data, out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
