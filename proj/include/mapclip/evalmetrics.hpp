#pragma once

// Chamfer-threshold average precision and split-based reporting. Matching
// is greedy in descending confidence within each frame; AP integrates the
// exact precision envelope over recall (all-point interpolation).

#include <map>
#include <string>
#include <vector>

#include "mapclip/geometry.hpp"

namespace mapclip::eval {

struct ScoredPred {
  int64_t frame_key = 0;
  geometry::Category category = geometry::Category::divider;
  double score = 0.0;
  std::vector<geometry::Vec2> points;  // meters, ego frame
};

struct GtElement {
  int64_t frame_key = 0;
  geometry::Category category = geometry::Category::divider;
  std::vector<geometry::Vec2> points;
};

// AP for a single category at one Chamfer threshold. Preds and gts must
// already be filtered to the category; gts must be non-empty.
double average_precision(std::vector<ScoredPred> preds, const std::vector<GtElement>& gts,
                         double chamfer_threshold);

struct EvalReport {
  std::string split;
  std::string model_id;
  std::string config_id;
  std::vector<double> thresholds;
  // category name -> threshold -> AP; only categories with ground truth.
  std::map<std::string, std::map<double, double>> ap;
  std::map<std::string, double> ap_mean;  // mean over thresholds
  double map = 0.0;                       // mean of per-category means
  std::vector<std::string> skipped_categories;
  int n_frames = 0;
  int n_gt = 0;
  int n_pred = 0;

  std::string to_json() const;
  static EvalReport from_json(const std::string& text);
  std::string to_text() const;
};

EvalReport compute_report(const std::vector<ScoredPred>& preds, const std::vector<GtElement>& gts,
                          const std::vector<double>& thresholds, const std::string& split_name);

// Aligned plain-text comparison table for ablation sweeps: one row per
// labeled report, AP columns per category plus mAP.
std::string comparison_table(const std::vector<std::pair<std::string, EvalReport>>& rows);
std::string comparison_csv(const std::vector<std::pair<std::string, EvalReport>>& rows);

}  // namespace mapclip::eval
