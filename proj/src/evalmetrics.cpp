#include "mapclip/evalmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace mapclip::eval {

using geometry::Category;

double average_precision(std::vector<ScoredPred> preds, const std::vector<GtElement>& gts,
                         double chamfer_threshold) {
  require_domain(!gts.empty(), "average_precision: no ground truth for this category");
  // Stable confidence ranking (ties broken by original order).
  std::vector<size_t> order(preds.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return preds[a].score > preds[b].score; });

  std::vector<bool> gt_used(gts.size(), false);
  std::vector<int> tp_flags;
  tp_flags.reserve(preds.size());
  for (size_t oi = 0; oi < order.size(); ++oi) {
    const ScoredPred& p = preds[order[oi]];
    double best = std::numeric_limits<double>::infinity();
    int best_gt = -1;
    for (size_t gi = 0; gi < gts.size(); ++gi) {
      if (gt_used[gi] || gts[gi].frame_key != p.frame_key) continue;
      const double d = geometry::chamfer_distance(p.points, gts[gi].points);
      if (d < best) {
        best = d;
        best_gt = static_cast<int>(gi);
      }
    }
    if (best_gt >= 0 && best <= chamfer_threshold) {
      gt_used[static_cast<size_t>(best_gt)] = true;
      tp_flags.push_back(1);
    } else {
      tp_flags.push_back(0);
    }
  }

  const double n_gt = static_cast<double>(gts.size());
  std::vector<double> precision(tp_flags.size()), recall(tp_flags.size());
  int tp = 0;
  for (size_t i = 0; i < tp_flags.size(); ++i) {
    tp += tp_flags[i];
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    recall[i] = static_cast<double>(tp) / n_gt;
  }
  // Precision envelope (running max from the right), integrated over recall.
  double ap = 0.0;
  double env = 0.0;
  double prev_recall = 0.0;
  std::vector<double> envelope(precision.size());
  for (size_t i = precision.size(); i-- > 0;) {
    env = std::max(env, precision[i]);
    envelope[i] = env;
  }
  for (size_t i = 0; i < precision.size(); ++i) {
    ap += (recall[i] - prev_recall) * envelope[i];
    prev_recall = recall[i];
  }
  return ap;
}

EvalReport compute_report(const std::vector<ScoredPred>& preds, const std::vector<GtElement>& gts,
                          const std::vector<double>& thresholds, const std::string& split_name) {
  EvalReport rep;
  rep.split = split_name;
  rep.thresholds = thresholds;
  rep.n_gt = static_cast<int>(gts.size());
  rep.n_pred = static_cast<int>(preds.size());

  for (int c = 0; c < geometry::kNumCategories; ++c) {
    const Category cat = static_cast<Category>(c);
    std::vector<GtElement> cat_gts;
    for (const auto& g : gts)
      if (g.category == cat) cat_gts.push_back(g);
    if (cat_gts.empty()) {
      rep.skipped_categories.push_back(geometry::category_name(cat));
      continue;
    }
    std::vector<ScoredPred> cat_preds;
    for (const auto& p : preds)
      if (p.category == cat) cat_preds.push_back(p);
    double mean = 0.0;
    for (double thr : thresholds) {
      const double ap = average_precision(cat_preds, cat_gts, thr);
      rep.ap[geometry::category_name(cat)][thr] = ap;
      mean += ap;
    }
    mean /= static_cast<double>(thresholds.size());
    rep.ap_mean[geometry::category_name(cat)] = mean;
  }
  if (!rep.ap_mean.empty()) {
    double s = 0.0;
    for (const auto& kv : rep.ap_mean) s += kv.second;
    rep.map = s / static_cast<double>(rep.ap_mean.size());
  }
  return rep;
}

std::string EvalReport::to_json() const {
  nlohmann::json j;
  j["split"] = split;
  j["model_id"] = model_id;
  j["config_id"] = config_id;
  j["thresholds"] = thresholds;
  nlohmann::json ap_j = nlohmann::json::object();
  for (const auto& [cat, per_thr] : ap) {
    nlohmann::json row = nlohmann::json::object();
    for (const auto& [thr, v] : per_thr) {
      std::ostringstream key;
      key << thr;
      row[key.str()] = v;
    }
    ap_j[cat] = std::move(row);
  }
  j["ap"] = std::move(ap_j);
  j["ap_mean"] = ap_mean;
  j["map"] = map;
  j["skipped_categories"] = skipped_categories;
  j["n_frames"] = n_frames;
  j["n_gt"] = n_gt;
  j["n_pred"] = n_pred;
  return j.dump(2);
}

EvalReport EvalReport::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("eval report: invalid JSON: ") + e.what());
  }
  EvalReport rep;
  rep.split = j.at("split").get<std::string>();
  rep.model_id = j.value("model_id", "");
  rep.config_id = j.value("config_id", "");
  rep.thresholds = j.at("thresholds").get<std::vector<double>>();
  for (const auto& [cat, row] : j.at("ap").items())
    for (const auto& [thr, v] : row.items()) rep.ap[cat][std::stod(thr)] = v.get<double>();
  rep.ap_mean = j.at("ap_mean").get<std::map<std::string, double>>();
  rep.map = j.at("map").get<double>();
  rep.skipped_categories = j.at("skipped_categories").get<std::vector<std::string>>();
  rep.n_frames = j.value("n_frames", 0);
  rep.n_gt = j.value("n_gt", 0);
  rep.n_pred = j.value("n_pred", 0);
  return rep;
}

std::string EvalReport::to_text() const {
  std::ostringstream os;
  os << "split: " << split << "  (frames " << n_frames << ", gt " << n_gt << ", pred " << n_pred
     << ")\n";
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%-22s", "category");
  os << buf;
  for (double thr : thresholds) {
    std::snprintf(buf, sizeof(buf), "AP@%-5.2f ", thr);
    os << buf;
  }
  os << "mean\n";
  for (const auto& [cat, per_thr] : ap) {
    std::snprintf(buf, sizeof(buf), "%-22s", cat.c_str());
    os << buf;
    for (double thr : thresholds) {
      std::snprintf(buf, sizeof(buf), "%-8.4f ", per_thr.at(thr));
      os << buf;
    }
    std::snprintf(buf, sizeof(buf), "%-8.4f", ap_mean.at(cat));
    os << buf << "\n";
  }
  std::snprintf(buf, sizeof(buf), "mAP: %.4f", map);
  os << buf;
  if (!skipped_categories.empty()) {
    os << "  (skipped, no ground truth:";
    for (const auto& c : skipped_categories) os << " " << c;
    os << ")";
  }
  os << "\n";
  return os.str();
}

std::string comparison_table(const std::vector<std::pair<std::string, EvalReport>>& rows) {
  std::ostringstream os;
  char buf[200];
  std::snprintf(buf, sizeof(buf), "%-32s", "run");
  os << buf;
  std::vector<std::string> cats;
  if (!rows.empty())
    for (const auto& kv : rows.front().second.ap_mean) cats.push_back(kv.first);
  for (const auto& c : cats) {
    std::snprintf(buf, sizeof(buf), "%-14s", ("AP_" + c.substr(0, 8)).c_str());
    os << buf;
  }
  os << "mAP\n";
  for (const auto& [label, rep] : rows) {
    std::snprintf(buf, sizeof(buf), "%-32s", label.c_str());
    os << buf;
    for (const auto& c : cats) {
      const auto it = rep.ap_mean.find(c);
      std::snprintf(buf, sizeof(buf), "%-14.4f", it == rep.ap_mean.end() ? 0.0 : it->second);
      os << buf;
    }
    std::snprintf(buf, sizeof(buf), "%.4f", rep.map);
    os << buf << "\n";
  }
  return os.str();
}

std::string comparison_csv(const std::vector<std::pair<std::string, EvalReport>>& rows) {
  std::ostringstream os;
  std::vector<std::string> cats;
  if (!rows.empty())
    for (const auto& kv : rows.front().second.ap_mean) cats.push_back(kv.first);
  os << "run";
  for (const auto& c : cats) os << ",ap_" << c;
  os << ",map\n";
  for (const auto& [label, rep] : rows) {
    os << label;
    for (const auto& c : cats) {
      const auto it = rep.ap_mean.find(c);
      os << "," << (it == rep.ap_mean.end() ? 0.0 : it->second);
    }
    os << "," << rep.map << "\n";
  }
  return os.str();
}

}  // namespace mapclip::eval
