#pragma once

// Figure emission without external renderers: SVG for vector figures (map
// overlays, PR curves) and PGM for feature images (PCA projections of BEV
// features).

#include <filesystem>
#include <vector>

#include "mapclip/evalmetrics.hpp"
#include "mapclip/geometry.hpp"
#include "mapclip/tensor.hpp"

namespace mapclip::plotting {

struct OverlayElement {
  geometry::PolylineElement element;
  double score = -1.0;  // >= 0 marks a prediction (drawn dashed)
};

void svg_map_overlay(const std::filesystem::path& path, const geometry::BevGridSpec& grid,
                     const std::vector<OverlayElement>& elements, const std::string& title);

// First principal component of the channel dimension, mapped to [0,255].
numerics::Tensor<double> pca_project(const numerics::Tensor<float>& bev);

void pgm_image(const std::filesystem::path& path, const numerics::Tensor<double>& values_hw);

struct PrPoint {
  double recall = 0.0;
  double precision = 0.0;
};

void svg_pr_curves(const std::filesystem::path& path,
                   const std::vector<std::pair<std::string, std::vector<PrPoint>>>& curves,
                   const std::string& title);

// PR points for one category at one threshold (same matching rule as
// average_precision).
std::vector<PrPoint> pr_points(std::vector<eval::ScoredPred> preds,
                               const std::vector<eval::GtElement>& gts, double chamfer_threshold);

// Horizontal bar chart of labeled mAP values (ablation tables).
void svg_bar_chart(const std::filesystem::path& path,
                   const std::vector<std::pair<std::string, double>>& bars,
                   const std::string& title);

}  // namespace mapclip::plotting
