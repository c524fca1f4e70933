#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mapclip/geometry.hpp"
#include "mapclip/rng.hpp"

using namespace mapclip;
using namespace mapclip::geometry;
using mapclip::numerics::SeededStream;

namespace {

std::vector<Vec2> random_points(int n, SeededStream& rng, double lo = -10.0, double hi = 10.0) {
  std::vector<Vec2> pts(static_cast<size_t>(n));
  for (auto& p : pts) p = {rng.uniform(lo, hi), rng.uniform(lo, hi)};
  return pts;
}

// Independent brute-force chamfer oracle.
double chamfer_oracle(const std::vector<Vec2>& a, const std::vector<Vec2>& b) {
  double sa = 0.0;
  for (const auto& p : a) {
    double best = 1e300;
    for (const auto& q : b) best = std::min(best, std::hypot(p.x - q.x, p.y - q.y));
    sa += best;
  }
  double sb = 0.0;
  for (const auto& q : b) {
    double best = 1e300;
    for (const auto& p : a) best = std::min(best, std::hypot(p.x - q.x, p.y - q.y));
    sb += best;
  }
  return 0.5 * (sa / a.size() + sb / b.size());
}

double mean_l1(const std::vector<Vec2>& a, const std::vector<Vec2>& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i)
    s += std::abs(a[i].x - b[i].x) + std::abs(a[i].y - b[i].y);
  return s / a.size();
}

}  // namespace

TEST_CASE("chamfer distance examples") {
  std::vector<Vec2> a{{0, 0}, {1, 2}, {-3, 4}};
  CHECK(chamfer_distance(a, a) == doctest::Approx(0.0));
  CHECK(chamfer_distance({{0, 0}}, {{3, 4}}) == doctest::Approx(5.0));
  // a={(0,0),(1,0)}, b={(0,1)}: 0.5*((1+sqrt2)/2 + 1)
  const double expected = 0.5 * ((1.0 + std::sqrt(2.0)) / 2.0 + 1.0);
  CHECK(chamfer_distance({{0, 0}, {1, 0}}, {{0, 1}}) == doctest::Approx(expected));
  CHECK_THROWS_AS(chamfer_distance({}, a), std::domain_error);
}

TEST_CASE("chamfer symmetry, identity and scaling over random sets") {
  SeededStream rng(77, "chamfer");
  for (int trial = 0; trial < 50; ++trial) {
    auto a = random_points(static_cast<int>(rng.uniform_int(1, 8)), rng);
    auto b = random_points(static_cast<int>(rng.uniform_int(1, 8)), rng);
    const double ab = chamfer_distance(a, b);
    CHECK(ab == doctest::Approx(chamfer_distance(b, a)));
    CHECK(ab == doctest::Approx(chamfer_oracle(a, b)));
    CHECK(ab >= 0.0);
    CHECK(chamfer_distance(a, a) == doctest::Approx(0.0));
    const double s = 2.5;
    auto as = a, bs = b;
    for (auto& p : as) p = p * s;
    for (auto& p : bs) p = p * s;
    CHECK(chamfer_distance(as, bs) == doctest::Approx(s * ab));
  }
}

TEST_CASE("permutation distance trivial cases") {
  PolylineElement gt{Category::divider, false, {{0, 0}, {1, 0}, {2, 1}, {3, 3}}};
  PolylineElement pred = gt;
  auto m = min_permutation_point_distance(pred, gt);
  CHECK(m.distance == doctest::Approx(0.0));
  CHECK(m.perm == std::vector<int>{0, 1, 2, 3});

  PolylineElement rev = gt;
  std::reverse(rev.points.begin(), rev.points.end());
  auto mr = min_permutation_point_distance(rev, gt);
  CHECK(mr.distance == doctest::Approx(0.0));
  CHECK(mr.perm == std::vector<int>{3, 2, 1, 0});

  PolylineElement bad = gt;
  bad.points.pop_back();
  CHECK_THROWS_AS(min_permutation_point_distance(bad, gt), std::domain_error);
}

TEST_CASE("permutation distance equals exhaustive enumeration") {
  SeededStream rng(13, "perm");
  for (int trial = 0; trial < 40; ++trial) {
    const int n = static_cast<int>(rng.uniform_int(3, 8));
    const bool closed = rng.bernoulli(0.5);
    PolylineElement a{Category::boundary, closed, random_points(n, rng)};
    PolylineElement b{Category::boundary, closed, random_points(n, rng)};

    // Oracle: materialize every ordering of b in the equivalence set.
    double best = 1e300;
    std::vector<std::vector<Vec2>> orderings;
    if (closed) {
      for (int shift = 0; shift < n; ++shift) {
        std::vector<Vec2> fwd, bwd;
        for (int i = 0; i < n; ++i) fwd.push_back(b.points[(shift + i) % n]);
        for (int i = 0; i < n; ++i) bwd.push_back(b.points[((shift - i) % n + n) % n]);
        orderings.push_back(fwd);
        orderings.push_back(bwd);
      }
      CHECK(static_cast<int>(orderings.size()) == 2 * n);
    } else {
      orderings.push_back(b.points);
      auto r = b.points;
      std::reverse(r.begin(), r.end());
      orderings.push_back(r);
    }
    for (const auto& ord : orderings) best = std::min(best, mean_l1(a.points, ord));

    auto m = min_permutation_point_distance(a, b);
    CHECK(m.distance == doctest::Approx(best).epsilon(1e-12));
    // The returned permutation reproduces the reported distance.
    std::vector<Vec2> permuted(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) permuted[i] = b.points[m.perm[i]];
    CHECK(mean_l1(a.points, permuted) == doctest::Approx(m.distance));
  }
}

TEST_CASE("edge directions") {
  PolylineElement two{Category::divider, false, {{0, 0}, {2, 0}}};
  auto d2 = edge_directions(two);
  REQUIRE(d2.dirs.size() == 1);
  CHECK(d2.dirs[0].x == doctest::Approx(1.0));
  CHECK(d2.dirs[0].y == doctest::Approx(0.0));

  PolylineElement bend{Category::divider, false, {{0, 0}, {0, 3}, {4, 3}}};
  auto db = edge_directions(bend);
  REQUIRE(db.dirs.size() == 2);
  CHECK(db.dirs[0].y == doctest::Approx(1.0));
  CHECK(db.dirs[1].x == doctest::Approx(1.0));

  PolylineElement square{Category::pedestrian_crossing, true, {{0, 0}, {1, 0}, {1, 1}, {0, 1}}};
  auto ds = edge_directions(square);
  REQUIRE(ds.dirs.size() == 4);
  for (const auto& d : ds.dirs) {
    CHECK(std::abs(d.norm() - 1.0) <= 1e-9);
    CHECK(std::min(std::abs(d.x), std::abs(d.y)) == doctest::Approx(0.0));
  }

  PolylineElement degen{Category::divider, false, {{0, 0}, {0, 0}, {1, 0}}};
  auto dd = edge_directions(degen);
  CHECK(dd.degenerate[0]);
  CHECK_FALSE(dd.degenerate[1]);
  CHECK(dd.dirs[0].norm() == doctest::Approx(0.0));

  SeededStream rng(3, "edges");
  for (int trial = 0; trial < 20; ++trial) {
    PolylineElement e{Category::boundary, rng.bernoulli(0.5), random_points(6, rng)};
    auto d = edge_directions(e);
    for (size_t i = 0; i < d.dirs.size(); ++i)
      if (!d.degenerate[i]) CHECK(std::abs(d.dirs[i].norm() - 1.0) <= 1e-9);
  }
}

TEST_CASE("rasterize") {
  BevGridSpec spec;  // 50x100 over 30x60 m

  SUBCASE("empty element list gives zero masks") {
    auto masks = rasterize({}, spec, 1.0);
    for (const auto& m : masks)
      for (uint8_t v : m) CHECK(v == 0);
  }

  SUBCASE("element fully outside the extent contributes nothing") {
    PolylineElement far{Category::divider, false, {{100, 100}, {120, 100}}};
    auto masks = rasterize({far}, spec, 1.0);
    for (const auto& m : masks)
      for (uint8_t v : m) CHECK(v == 0);
  }

  SUBCASE("matches the per-cell distance oracle") {
    PolylineElement div{Category::divider, false, {{-20, 0.1}, {20, 0.1}}};
    PolylineElement cross{Category::pedestrian_crossing, true, {{2, -3}, {6, -3}, {6, 3}, {2, 3}}};
    const double stroke = 1.0;
    auto masks = rasterize({div, cross}, spec, stroke);
    for (int cat : {static_cast<int>(Category::divider), static_cast<int>(Category::pedestrian_crossing)}) {
      const auto& m = masks[cat];
      const PolylineElement& el = cat == static_cast<int>(Category::divider) ? div : cross;
      const int n = static_cast<int>(el.points.size());
      const int n_edges = el.closed ? n : n - 1;
      for (int r = 0; r < spec.h; ++r)
        for (int c = 0; c < spec.w; ++c) {
          const Vec2 center = grid_to_world({r + 0.5, c + 0.5}, spec);
          double dmin = 1e300;
          for (int i = 0; i < n_edges; ++i)
            dmin = std::min(dmin, dist_point_segment(center, el.points[i], el.points[(i + 1) % n]));
          const bool expect = dmin <= stroke / 2.0;
          CHECK(static_cast<bool>(m[static_cast<size_t>(r) * spec.w + c]) == expect);
        }
    }
  }

  SUBCASE("stroke covers the expected number of rows") {
    // Divider along the grid's horizontal center line, which lies on a cell
    // boundary: cells whose centers are within stroke/2 = 0.6 of y=0 are the
    // two rows at distance 0.3.
    PolylineElement div{Category::divider, false, {{-30, 0.0}, {30, 0.0}}};
    auto masks = rasterize({div}, spec, 1.2);
    int rows_hit = 0;
    for (int r = 0; r < spec.h; ++r) {
      bool any = false;
      for (int c = 0; c < spec.w; ++c)
        any = any || masks[static_cast<int>(Category::divider)][static_cast<size_t>(r) * spec.w + c];
      rows_hit += any ? 1 : 0;
    }
    CHECK(rows_hit == static_cast<int>(std::ceil(1.2 / spec.cell_h())));
  }
}

TEST_CASE("grid transforms") {
  BevGridSpec spec;
  const GridCoord origin = world_to_grid({0, 0}, spec);
  CHECK(origin.row == doctest::Approx(spec.h / 2.0));
  CHECK(origin.col == doctest::Approx(spec.w / 2.0));

  const GridCoord lo = world_to_grid({-spec.x_extent / 2, -spec.y_extent / 2}, spec);
  CHECK(lo.row == doctest::Approx(0.0));
  CHECK(lo.col == doctest::Approx(0.0));
  const GridCoord hi = world_to_grid({spec.x_extent / 2, spec.y_extent / 2}, spec);
  CHECK(hi.row == doctest::Approx(static_cast<double>(spec.h)));
  CHECK(hi.col == doctest::Approx(static_cast<double>(spec.w)));

  SeededStream rng(5, "grid");
  for (int i = 0; i < 100; ++i) {
    const Vec2 p{rng.uniform(-40, 40), rng.uniform(-20, 20)};
    const Vec2 q = grid_to_world(world_to_grid(p, spec), spec);
    CHECK(std::abs(p.x - q.x) <= 1e-9);
    CHECK(std::abs(p.y - q.y) <= 1e-9);
    const GridCoord gidx{rng.uniform(0, spec.h), rng.uniform(0, spec.w)};
    const GridCoord back = world_to_grid(grid_to_world(gidx, spec), spec);
    CHECK(std::abs(gidx.row - back.row) <= 1e-9);
    CHECK(std::abs(gidx.col - back.col) <= 1e-9);
  }
}

TEST_CASE("polyline resampling and clipping") {
  std::vector<Vec2> line{{0, 0}, {10, 0}};
  auto r = resample_polyline(line, 5, false);
  REQUIRE(r.size() == 5);
  CHECK(r[0].x == doctest::Approx(0.0));
  CHECK(r[4].x == doctest::Approx(10.0));
  CHECK(r[2].x == doctest::Approx(5.0));

  std::vector<Vec2> square{{0, 0}, {4, 0}, {4, 4}, {0, 4}};
  auto rc = resample_polyline(square, 8, true);
  REQUIRE(rc.size() == 8);
  CHECK(polyline_length(rc, true) == doctest::Approx(16.0));

  auto pieces = clip_polyline_to_rect({{-5, 1}, {5, 1}}, -2, 2, -2, 2);
  REQUIRE(pieces.size() == 1);
  CHECK(pieces[0].front().x == doctest::Approx(-2.0));
  CHECK(pieces[0].back().x == doctest::Approx(2.0));

  // A chain that leaves and re-enters produces two pieces.
  auto two = clip_polyline_to_rect({{-1, 0}, {1, 0}, {1, 10}, {-1, 10}, {-1, 1}}, -2, 2, -2, 2);
  CHECK(two.size() == 2);
}

TEST_CASE("interchange records round-trip exactly") {
  ElementRecord rec;
  rec.element.category = Category::boundary;
  rec.element.closed = false;
  rec.element.points = {{1.234567890123456789, -7.5e-13}, {3.0, 4.0}};
  rec.frame = 12;
  rec.score = 0.875;
  const std::string line = element_record_to_json(rec);
  const ElementRecord back = element_record_from_json(line);
  CHECK(back.element.category == rec.element.category);
  CHECK(back.element.closed == rec.element.closed);
  REQUIRE(back.element.points.size() == rec.element.points.size());
  for (size_t i = 0; i < rec.element.points.size(); ++i) {
    CHECK(back.element.points[i].x == rec.element.points[i].x);
    CHECK(back.element.points[i].y == rec.element.points[i].y);
  }
  CHECK(back.frame == 12);
  CHECK(back.score == doctest::Approx(0.875));

  CHECK_THROWS_AS(element_record_from_json("{not json"), FormatError);
  CHECK_THROWS_AS(element_record_from_json("{\"category\":\"nope\",\"closed\":false,\"points\":[]}"),
                  FormatError);

  std::stringstream ss;
  write_elements_jsonl(ss, {rec, rec});
  auto all = read_elements_jsonl(ss);
  CHECK(all.size() == 2);
}
