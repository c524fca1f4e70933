#include "mapclip/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>

#include "json.hpp"

namespace mapclip::geometry {

double Vec2::norm() const { return std::hypot(x, y); }

double dist(Vec2 a, Vec2 b) { return (a - b).norm(); }

double dist_point_segment(Vec2 p, Vec2 a, Vec2 b) {
  const Vec2 ab = b - a;
  const double len2 = ab.dot(ab);
  if (len2 <= 0.0) return dist(p, a);
  double t = (p - a).dot(ab) / len2;
  t = std::clamp(t, 0.0, 1.0);
  return dist(p, a + ab * t);
}

const char* category_name(Category c) {
  switch (c) {
    case Category::pedestrian_crossing: return "pedestrian_crossing";
    case Category::divider: return "divider";
    case Category::boundary: return "boundary";
    case Category::centerline: return "centerline";
  }
  return "unknown";
}

Category category_from_name(const std::string& name) {
  for (int i = 0; i < kNumCategories; ++i)
    if (name == category_name(static_cast<Category>(i))) return static_cast<Category>(i);
  throw FormatError("unknown category name: " + name);
}

void BevGridSpec::validate() const {
  require_config(h >= 1 && w >= 1, "grid: cell counts must be >= 1");
  require_config(x_extent > 0.0 && y_extent > 0.0, "grid: extents must be positive");
}

GridCoord world_to_grid(Vec2 p, const BevGridSpec& spec) {
  return {(p.y + 0.5 * spec.y_extent) / spec.cell_h(),
          (p.x + 0.5 * spec.x_extent) / spec.cell_w()};
}

Vec2 grid_to_world(GridCoord g, const BevGridSpec& spec) {
  return {g.col * spec.cell_w() - 0.5 * spec.x_extent,
          g.row * spec.cell_h() - 0.5 * spec.y_extent};
}

double chamfer_distance(const std::vector<Vec2>& a, const std::vector<Vec2>& b) {
  require_domain(!a.empty() && !b.empty(), "chamfer_distance: empty point set");
  auto directed = [](const std::vector<Vec2>& from, const std::vector<Vec2>& to) {
    double sum = 0.0;
    for (const Vec2& p : from) {
      double best = std::numeric_limits<double>::infinity();
      for (const Vec2& q : to) best = std::min(best, dist(p, q));
      sum += best;
    }
    return sum / static_cast<double>(from.size());
  };
  return 0.5 * (directed(a, b) + directed(b, a));
}

PermutationMatch min_permutation_point_distance(const PolylineElement& a,
                                                const PolylineElement& b) {
  const int n = static_cast<int>(a.points.size());
  require_domain(n > 0 && static_cast<int>(b.points.size()) == n,
                 "min_permutation_point_distance: point counts differ");
  auto mean_l1 = [&](const std::vector<int>& perm) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) {
      const Vec2 d = a.points[static_cast<size_t>(i)] - b.points[static_cast<size_t>(perm[static_cast<size_t>(i)])];
      s += std::abs(d.x) + std::abs(d.y);
    }
    return s / n;
  };

  std::vector<std::vector<int>> candidates;
  if (b.closed) {
    for (int shift = 0; shift < n; ++shift) {
      for (int dir : {1, -1}) {
        std::vector<int> perm(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) perm[static_cast<size_t>(i)] = ((shift + dir * i) % n + n) % n;
        candidates.push_back(std::move(perm));
      }
    }
  } else {
    std::vector<int> identity(static_cast<size_t>(n)), reversal(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      identity[static_cast<size_t>(i)] = i;
      reversal[static_cast<size_t>(i)] = n - 1 - i;
    }
    candidates.push_back(std::move(identity));
    candidates.push_back(std::move(reversal));
  }

  PermutationMatch best;
  best.distance = std::numeric_limits<double>::infinity();
  for (auto& perm : candidates) {
    const double d = mean_l1(perm);
    if (d < best.distance) {
      best.distance = d;
      best.perm = perm;
    }
  }
  return best;
}

EdgeDirections edge_directions(const PolylineElement& e) {
  const int n = static_cast<int>(e.points.size());
  require_domain(n >= 2, "edge_directions: need at least two points");
  const int n_edges = e.closed ? n : n - 1;
  EdgeDirections out;
  out.dirs.resize(static_cast<size_t>(n_edges));
  out.degenerate.resize(static_cast<size_t>(n_edges));
  constexpr double kMinLen = 1e-12;
  for (int i = 0; i < n_edges; ++i) {
    const Vec2 d = e.points[static_cast<size_t>((i + 1) % n)] - e.points[static_cast<size_t>(i)];
    const double len = d.norm();
    if (len < kMinLen) {
      out.dirs[static_cast<size_t>(i)] = {0.0, 0.0};
      out.degenerate[static_cast<size_t>(i)] = true;
    } else {
      out.dirs[static_cast<size_t>(i)] = {d.x / len, d.y / len};
      out.degenerate[static_cast<size_t>(i)] = false;
    }
  }
  return out;
}

CategoryMasks rasterize(const std::vector<PolylineElement>& elements, const BevGridSpec& spec,
                        double stroke_width) {
  spec.validate();
  CategoryMasks masks;
  for (auto& m : masks) m.assign(static_cast<size_t>(spec.h) * spec.w, 0);
  const double r = 0.5 * stroke_width;
  for (const PolylineElement& el : elements) {
    auto& mask = masks[static_cast<size_t>(el.category)];
    const int n = static_cast<int>(el.points.size());
    const int n_edges = el.closed ? n : n - 1;
    for (int i = 0; i < n_edges; ++i) {
      const Vec2 a = el.points[static_cast<size_t>(i)];
      const Vec2 b = el.points[static_cast<size_t>((i + 1) % n)];
      // Grid window covering the segment dilated by the stroke radius.
      const GridCoord ga = world_to_grid(a, spec);
      const GridCoord gb = world_to_grid(b, spec);
      const double pad_r = r / spec.cell_h() + 1.0;
      const double pad_c = r / spec.cell_w() + 1.0;
      const int r0 = std::max(0, static_cast<int>(std::floor(std::min(ga.row, gb.row) - pad_r)));
      const int r1 = std::min(spec.h - 1, static_cast<int>(std::ceil(std::max(ga.row, gb.row) + pad_r)));
      const int c0 = std::max(0, static_cast<int>(std::floor(std::min(ga.col, gb.col) - pad_c)));
      const int c1 = std::min(spec.w - 1, static_cast<int>(std::ceil(std::max(ga.col, gb.col) + pad_c)));
      for (int row = r0; row <= r1; ++row) {
        for (int col = c0; col <= c1; ++col) {
          const Vec2 center = grid_to_world({row + 0.5, col + 0.5}, spec);
          if (dist_point_segment(center, a, b) <= r)
            mask[static_cast<size_t>(row) * spec.w + col] = 1;
        }
      }
    }
  }
  return masks;
}

double polyline_length(const std::vector<Vec2>& pts, bool closed) {
  double len = 0.0;
  const size_t n = pts.size();
  if (n < 2) return 0.0;
  for (size_t i = 0; i + 1 < n; ++i) len += dist(pts[i], pts[i + 1]);
  if (closed) len += dist(pts[n - 1], pts[0]);
  return len;
}

std::vector<Vec2> resample_polyline(const std::vector<Vec2>& pts, int n, bool closed) {
  require(n >= 2 && !pts.empty(), "resample_polyline: need n >= 2 and nonempty input");
  std::vector<Vec2> chain = pts;
  if (closed) chain.push_back(pts.front());
  std::vector<double> cum(chain.size(), 0.0);
  for (size_t i = 1; i < chain.size(); ++i) cum[i] = cum[i - 1] + dist(chain[i - 1], chain[i]);
  const double total = cum.back();
  std::vector<Vec2> out(static_cast<size_t>(n));
  if (total <= 0.0) {
    std::fill(out.begin(), out.end(), pts.front());
    return out;
  }
  const double step = closed ? total / n : total / (n - 1);
  size_t seg = 0;
  for (int i = 0; i < n; ++i) {
    const double target = std::min(step * i, total);
    while (seg + 1 < cum.size() - 1 && cum[seg + 1] < target) ++seg;
    const double seg_len = cum[seg + 1] - cum[seg];
    const double t = seg_len > 0.0 ? (target - cum[seg]) / seg_len : 0.0;
    out[static_cast<size_t>(i)] = chain[seg] + (chain[seg + 1] - chain[seg]) * t;
  }
  return out;
}

namespace {

// Liang-Barsky segment clip; returns false when fully outside.
bool clip_segment(Vec2 a, Vec2 b, double xmin, double xmax, double ymin, double ymax, Vec2& ca,
                  Vec2& cb) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  double t0 = 0.0, t1 = 1.0;
  const double p[4] = {-dx, dx, -dy, dy};
  const double q[4] = {a.x - xmin, xmax - a.x, a.y - ymin, ymax - a.y};
  for (int i = 0; i < 4; ++i) {
    if (p[i] == 0.0) {
      if (q[i] < 0.0) return false;
    } else {
      const double t = q[i] / p[i];
      if (p[i] < 0.0) {
        if (t > t1) return false;
        t0 = std::max(t0, t);
      } else {
        if (t < t0) return false;
        t1 = std::min(t1, t);
      }
    }
  }
  ca = {a.x + t0 * dx, a.y + t0 * dy};
  cb = {a.x + t1 * dx, a.y + t1 * dy};
  return true;
}

}  // namespace

std::vector<std::vector<Vec2>> clip_polyline_to_rect(const std::vector<Vec2>& pts, double xmin,
                                                     double xmax, double ymin, double ymax) {
  std::vector<std::vector<Vec2>> pieces;
  std::vector<Vec2> cur;
  constexpr double kJoinEps = 1e-9;
  for (size_t i = 0; i + 1 < pts.size(); ++i) {
    Vec2 ca, cb;
    if (!clip_segment(pts[i], pts[i + 1], xmin, xmax, ymin, ymax, ca, cb)) {
      if (cur.size() >= 2) pieces.push_back(std::move(cur));
      cur.clear();
      continue;
    }
    if (cur.empty()) {
      cur.push_back(ca);
    } else if (dist(cur.back(), ca) > kJoinEps) {
      if (cur.size() >= 2) pieces.push_back(std::move(cur));
      cur.clear();
      cur.push_back(ca);
    }
    if (dist(cur.back(), cb) > kJoinEps) cur.push_back(cb);
  }
  if (cur.size() >= 2) pieces.push_back(std::move(cur));
  return pieces;
}

// --- interchange -------------------------------------------------------------

std::string element_record_to_json(const ElementRecord& rec) {
  nlohmann::json j;
  j["category"] = category_name(rec.element.category);
  j["closed"] = rec.element.closed;
  nlohmann::json pts = nlohmann::json::array();
  for (const Vec2& p : rec.element.points) {
    pts.push_back(p.x);
    pts.push_back(p.y);
  }
  j["points"] = std::move(pts);
  if (rec.frame >= 0) j["frame"] = rec.frame;
  if (rec.score >= 0.0) j["score"] = rec.score;
  return j.dump();
}

ElementRecord element_record_from_json(const std::string& line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("element record: invalid JSON: ") + e.what());
  }
  ElementRecord rec;
  try {
    rec.element.category = category_from_name(j.at("category").get<std::string>());
    rec.element.closed = j.at("closed").get<bool>();
    const auto& pts = j.at("points");
    if (!pts.is_array() || pts.size() % 2 != 0)
      throw FormatError("element record: points must be a flat even-length array");
    for (size_t i = 0; i < pts.size(); i += 2)
      rec.element.points.push_back({pts[i].get<double>(), pts[i + 1].get<double>()});
    if (j.contains("frame")) rec.frame = j["frame"].get<int>();
    if (j.contains("score")) rec.score = j["score"].get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("element record: missing or invalid field: ") + e.what());
  }
  return rec;
}

void write_elements_jsonl(std::ostream& os, const std::vector<ElementRecord>& recs) {
  for (const auto& r : recs) os << element_record_to_json(r) << "\n";
}

std::vector<ElementRecord> read_elements_jsonl(std::istream& is) {
  std::vector<ElementRecord> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    out.push_back(element_record_from_json(line));
  }
  return out;
}

}  // namespace mapclip::geometry
