#pragma once

// Vectorized map-element types, polyline distances, grid transforms and
// rasterization. Everything here is pure and double-precision.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "mapclip/common.hpp"

namespace mapclip::geometry {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  double dot(Vec2 o) const { return x * o.x + y * o.y; }
  double cross(Vec2 o) const { return x * o.y - y * o.x; }
  double norm() const;
};

double dist(Vec2 a, Vec2 b);
double dist_point_segment(Vec2 p, Vec2 a, Vec2 b);

enum class Category : int {
  pedestrian_crossing = 0,
  divider = 1,
  boundary = 2,
  centerline = 3,
};

inline constexpr int kNumCategories = 4;

const char* category_name(Category c);
Category category_from_name(const std::string& name);

// One vectorized map element: an ordered point chain in ego-frame meters.
// Closed elements are cyclic (the last point connects back to the first; no
// duplicated terminal point is stored).
struct PolylineElement {
  Category category = Category::divider;
  bool closed = false;
  std::vector<Vec2> points;
};

// BEV grid: rows (h) span the lateral y extent, columns (w) span the
// forward x extent; the ego origin sits at the grid center.
struct BevGridSpec {
  int h = 50;
  int w = 100;
  double x_extent = 60.0;  // forward range, meters
  double y_extent = 30.0;  // lateral range, meters

  double cell_w() const { return x_extent / w; }
  double cell_h() const { return y_extent / h; }
  void validate() const;
};

struct GridCoord {
  double row = 0.0;
  double col = 0.0;
};

GridCoord world_to_grid(Vec2 p, const BevGridSpec& spec);
Vec2 grid_to_world(GridCoord g, const BevGridSpec& spec);

// Symmetric Chamfer distance between two point sets (mean of directed
// nearest-neighbor means, halved).
double chamfer_distance(const std::vector<Vec2>& a, const std::vector<Vec2>& b);

struct PermutationMatch {
  double distance = 0.0;      // mean pointwise L1 distance under the best ordering
  std::vector<int> perm;      // perm[i]: index into `b` matched with a.points[i]
};

// Minimum mean L1 point distance over the MapTR equivalence set of the
// ground-truth element: {identity, reversal} for open chains, all cyclic
// shifts in both orientations for closed ones.
PermutationMatch min_permutation_point_distance(const PolylineElement& a,
                                                const PolylineElement& b);

struct EdgeDirections {
  std::vector<Vec2> dirs;        // unit vectors; zero vector where degenerate
  std::vector<bool> degenerate;  // true where the edge had (near-)zero length
};

EdgeDirections edge_directions(const PolylineElement& e);

// Binary occupancy per category; a cell is set iff its center lies within
// stroke_width/2 of some element polyline of that category.
using CategoryMasks = std::array<std::vector<uint8_t>, kNumCategories>;
CategoryMasks rasterize(const std::vector<PolylineElement>& elements, const BevGridSpec& spec,
                        double stroke_width);

// --- polyline utilities -----------------------------------------------------

double polyline_length(const std::vector<Vec2>& pts, bool closed);

// Arc-length uniform resampling to exactly n points. Closed chains sample
// the full perimeter without duplicating the terminal point.
std::vector<Vec2> resample_polyline(const std::vector<Vec2>& pts, int n, bool closed);

// Clip an open polyline to the axis-aligned rectangle; returns the pieces
// that remain inside (each with >= 2 points).
std::vector<std::vector<Vec2>> clip_polyline_to_rect(const std::vector<Vec2>& pts, double xmin,
                                                     double xmax, double ymin, double ymax);

// --- interchange format ------------------------------------------------------
//
// One JSON object per line: {"category": ..., "closed": ..., "points":
// [x1,y1,x2,y2,...]}; containers may add fields (frame, score) which are
// preserved by ElementRecord.

struct ElementRecord {
  PolylineElement element;
  int frame = -1;        // optional; -1 when absent
  double score = -1.0;   // optional; negative when absent
};

std::string element_record_to_json(const ElementRecord& rec);
ElementRecord element_record_from_json(const std::string& line);
void write_elements_jsonl(std::ostream& os, const std::vector<ElementRecord>& recs);
std::vector<ElementRecord> read_elements_jsonl(std::istream& is);

}  // namespace mapclip::geometry
