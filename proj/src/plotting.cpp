#include "mapclip/plotting.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace mapclip::plotting {

using geometry::BevGridSpec;
using geometry::Category;
using geometry::Vec2;

namespace {

const char* category_color(Category c) {
  switch (c) {
    case Category::pedestrian_crossing: return "#2a9d8f";
    case Category::divider: return "#e76f51";
    case Category::boundary: return "#264653";
    case Category::centerline: return "#e9c46a";
  }
  return "#000000";
}

struct SvgCanvas {
  std::ostringstream body;
  double width, height;

  SvgCanvas(double w, double h) : width(w), height(h) {}

  std::string finish(const std::string& title) {
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
       << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"8\" y=\"16\" font-family=\"monospace\" font-size=\"12\">" << title
       << "</text>\n";
    os << body.str();
    os << "</svg>\n";
    return os.str();
  }
};

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream os(path);
  require(os.good(), "plot: cannot write " + path.string());
  os << content;
}

}  // namespace

void svg_map_overlay(const std::filesystem::path& path, const BevGridSpec& grid,
                     const std::vector<OverlayElement>& elements, const std::string& title) {
  const double margin = 24.0, scale = 8.0;
  const double w = grid.x_extent * scale + 2 * margin;
  const double h = grid.y_extent * scale + 2 * margin;
  SvgCanvas svg(w, h);
  auto sx = [&](double x) { return margin + (x + 0.5 * grid.x_extent) * scale; };
  auto sy = [&](double y) { return h - margin - (y + 0.5 * grid.y_extent) * scale; };

  svg.body << "<rect x=\"" << margin << "\" y=\"" << margin << "\" width=\""
           << grid.x_extent * scale << "\" height=\"" << grid.y_extent * scale
           << "\" fill=\"none\" stroke=\"#999\"/>\n";
  // ego marker
  svg.body << "<circle cx=\"" << sx(0) << "\" cy=\"" << sy(0) << "\" r=\"4\" fill=\"#555\"/>\n";

  for (const auto& oe : elements) {
    const auto& el = oe.element;
    if (el.points.empty()) continue;
    std::ostringstream pts;
    for (const auto& p : el.points) pts << sx(p.x) << "," << sy(p.y) << " ";
    if (el.closed) pts << sx(el.points[0].x) << "," << sy(el.points[0].y);
    svg.body << "<polyline points=\"" << pts.str() << "\" fill=\"none\" stroke=\""
             << category_color(el.category) << "\" stroke-width=\""
             << (oe.score >= 0.0 ? 1.5 : 2.5) << "\"";
    if (oe.score >= 0.0) svg.body << " stroke-dasharray=\"5,3\" opacity=\"0.9\"";
    svg.body << "/>\n";
  }
  write_file(path, svg.finish(title));
}

numerics::Tensor<double> pca_project(const numerics::Tensor<float>& bev) {
  require(bev.rank() == 3, "pca_project: [H,W,C] input required");
  const int64_t h = bev.dim(0), w = bev.dim(1), c = bev.dim(2);
  const int64_t n = h * w;
  // channel means
  std::vector<double> mean(static_cast<size_t>(c), 0.0);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t k = 0; k < c; ++k) mean[static_cast<size_t>(k)] += bev.data[static_cast<size_t>(i * c + k)];
  for (auto& m : mean) m /= static_cast<double>(n);
  // covariance
  std::vector<double> cov(static_cast<size_t>(c * c), 0.0);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t a = 0; a < c; ++a) {
      const double va = bev.data[static_cast<size_t>(i * c + a)] - mean[static_cast<size_t>(a)];
      for (int64_t b = 0; b <= a; ++b) {
        const double vb = bev.data[static_cast<size_t>(i * c + b)] - mean[static_cast<size_t>(b)];
        cov[static_cast<size_t>(a * c + b)] += va * vb;
      }
    }
  for (int64_t a = 0; a < c; ++a)
    for (int64_t b = a + 1; b < c; ++b) cov[static_cast<size_t>(a * c + b)] = cov[static_cast<size_t>(b * c + a)];
  // leading eigenvector by power iteration (deterministic start)
  std::vector<double> v(static_cast<size_t>(c), 1.0 / std::sqrt(static_cast<double>(c)));
  std::vector<double> tmp(static_cast<size_t>(c), 0.0);
  for (int it = 0; it < 64; ++it) {
    for (int64_t a = 0; a < c; ++a) {
      double s = 0.0;
      for (int64_t b = 0; b < c; ++b) s += cov[static_cast<size_t>(a * c + b)] * v[static_cast<size_t>(b)];
      tmp[static_cast<size_t>(a)] = s;
    }
    double norm = 0.0;
    for (double x : tmp) norm += x * x;
    norm = std::sqrt(norm);
    if (norm <= 1e-30) break;
    for (int64_t a = 0; a < c; ++a) v[static_cast<size_t>(a)] = tmp[static_cast<size_t>(a)] / norm;
  }
  numerics::Tensor<double> out = numerics::Tensor<double>::zeros({h, w});
  for (int64_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (int64_t k = 0; k < c; ++k)
      s += (bev.data[static_cast<size_t>(i * c + k)] - mean[static_cast<size_t>(k)]) * v[static_cast<size_t>(k)];
    out.data[static_cast<size_t>(i)] = s;
  }
  return out;
}

void pgm_image(const std::filesystem::path& path, const numerics::Tensor<double>& values_hw) {
  require(values_hw.rank() == 2, "pgm_image: [H,W] input required");
  const int64_t h = values_hw.dim(0), w = values_hw.dim(1);
  double lo = 1e300, hi = -1e300;
  for (double v : values_hw.data) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double span = hi > lo ? hi - lo : 1.0;
  std::ofstream os(path, std::ios::binary);
  require(os.good(), "plot: cannot write " + path.string());
  os << "P5\n" << w << " " << h << "\n255\n";
  for (double v : values_hw.data) {
    const unsigned char b = static_cast<unsigned char>(std::lround(255.0 * (v - lo) / span));
    os.write(reinterpret_cast<const char*>(&b), 1);
  }
}

std::vector<PrPoint> pr_points(std::vector<eval::ScoredPred> preds,
                               const std::vector<eval::GtElement>& gts, double chamfer_threshold) {
  require_domain(!gts.empty(), "pr_points: no ground truth");
  std::vector<size_t> order(preds.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return preds[a].score > preds[b].score; });
  std::vector<bool> used(gts.size(), false);
  std::vector<PrPoint> out;
  int tp = 0;
  for (size_t oi = 0; oi < order.size(); ++oi) {
    const auto& p = preds[order[oi]];
    double best = 1e300;
    int bi = -1;
    for (size_t gi = 0; gi < gts.size(); ++gi) {
      if (used[gi] || gts[gi].frame_key != p.frame_key) continue;
      const double d = geometry::chamfer_distance(p.points, gts[gi].points);
      if (d < best) {
        best = d;
        bi = static_cast<int>(gi);
      }
    }
    if (bi >= 0 && best <= chamfer_threshold) {
      used[static_cast<size_t>(bi)] = true;
      ++tp;
    }
    out.push_back({static_cast<double>(tp) / static_cast<double>(gts.size()),
                   static_cast<double>(tp) / static_cast<double>(oi + 1)});
  }
  return out;
}

void svg_pr_curves(const std::filesystem::path& path,
                   const std::vector<std::pair<std::string, std::vector<PrPoint>>>& curves,
                   const std::string& title) {
  const double margin = 40.0, size = 320.0;
  SvgCanvas svg(size + 2 * margin, size + 2 * margin);
  auto sx = [&](double r) { return margin + r * size; };
  auto sy = [&](double p) { return margin + size - p * size; };
  svg.body << "<rect x=\"" << margin << "\" y=\"" << margin << "\" width=\"" << size
           << "\" height=\"" << size << "\" fill=\"none\" stroke=\"#999\"/>\n";
  svg.body << "<text x=\"" << margin + size / 2 << "\" y=\"" << size + 2 * margin - 8
           << "\" font-size=\"11\" font-family=\"monospace\">recall</text>\n";
  svg.body << "<text x=\"6\" y=\"" << margin + size / 2
           << "\" font-size=\"11\" font-family=\"monospace\" transform=\"rotate(-90 10 "
           << margin + size / 2 << ")\">precision</text>\n";
  const char* palette[] = {"#2a9d8f", "#e76f51", "#264653", "#e9c46a", "#7b2cbf", "#0077b6"};
  int ci = 0;
  for (const auto& [label, pts] : curves) {
    std::ostringstream line;
    line << sx(0) << "," << sy(pts.empty() ? 0.0 : pts.front().precision) << " ";
    for (const auto& p : pts) line << sx(p.recall) << "," << sy(p.precision) << " ";
    const char* color = palette[ci % 6];
    svg.body << "<polyline points=\"" << line.str() << "\" fill=\"none\" stroke=\"" << color
             << "\" stroke-width=\"1.5\"/>\n";
    svg.body << "<text x=\"" << margin + 6 << "\" y=\"" << margin + 14 + 13 * ci
             << "\" font-size=\"11\" font-family=\"monospace\" fill=\"" << color << "\">" << label
             << "</text>\n";
    ++ci;
  }
  write_file(path, svg.finish(title));
}

void svg_bar_chart(const std::filesystem::path& path,
                   const std::vector<std::pair<std::string, double>>& bars,
                   const std::string& title) {
  const double margin = 30.0, bar_h = 18.0, gap = 8.0, width = 420.0;
  const double h = margin * 2 + bars.size() * (bar_h + gap);
  SvgCanvas svg(width, h);
  double maxv = 1e-9;
  for (const auto& [label, v] : bars) maxv = std::max(maxv, v);
  double y = margin;
  for (const auto& [label, v] : bars) {
    const double len = (width - 180.0) * (v / maxv);
    svg.body << "<rect x=\"160\" y=\"" << y << "\" width=\"" << len << "\" height=\"" << bar_h
             << "\" fill=\"#2a9d8f\"/>\n";
    svg.body << "<text x=\"6\" y=\"" << y + bar_h - 4
             << "\" font-size=\"11\" font-family=\"monospace\">" << label << "</text>\n";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3f", v);
    svg.body << "<text x=\"" << 164 + len << "\" y=\"" << y + bar_h - 4
             << "\" font-size=\"11\" font-family=\"monospace\">" << buf << "</text>\n";
    y += bar_h + gap;
  }
  write_file(path, svg.finish(title));
}

}  // namespace mapclip::plotting
