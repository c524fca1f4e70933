#include "mapclip/synthworld.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>

#include "json.hpp"

#include "mapclip/rng.hpp"

namespace mapclip::synthworld {

using geometry::BevGridSpec;
using geometry::Category;
using geometry::PolylineElement;
using geometry::Vec2;
using numerics::SeededStream;
using numerics::Tensor;

namespace {

constexpr double kPathStep = 1.0;       // meters between path samples
constexpr double kElementStep = 2.0;    // meters between map-element vertices
constexpr double kMinPieceLen = 2.0;    // shortest clipped piece kept, meters
constexpr double kFarAway = std::numeric_limits<double>::infinity();

struct PathPoint {
  Vec2 p;
  double heading = 0.0;
};

Vec2 normal_of(double heading) { return {-std::sin(heading), std::cos(heading)}; }

const PathPoint& path_at(const std::vector<PathPoint>& path, double arc) {
  const double idx = std::clamp(arc / kPathStep, 0.0, static_cast<double>(path.size() - 1));
  return path[static_cast<size_t>(idx)];
}

std::vector<Vec2> offset_chain(const std::vector<PathPoint>& path, double offset) {
  std::vector<Vec2> out;
  const int stride = static_cast<int>(kElementStep / kPathStep);
  for (size_t i = 0; i < path.size(); i += static_cast<size_t>(stride))
    out.push_back(path[i].p + normal_of(path[i].heading) * offset);
  return out;
}

// Segment (a -> b) against an oriented box, in world/ego coordinates.
bool segment_hits_box(Vec2 a, Vec2 b, const OccluderState& box) {
  const double ch = std::cos(-box.heading), sh = std::sin(-box.heading);
  auto local = [&](Vec2 p) {
    const Vec2 d = p - box.center;
    return Vec2{d.x * ch - d.y * sh, d.x * sh + d.y * ch};
  };
  const Vec2 p0 = local(a), p1 = local(b);
  const double dx = p1.x - p0.x, dy = p1.y - p0.y;
  double t0 = 0.0, t1 = 1.0;
  const double p[4] = {-dx, dx, -dy, dy};
  const double q[4] = {p0.x + box.half_len, box.half_len - p0.x, p0.y + box.half_wid,
                       box.half_wid - p0.y};
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
  return t0 <= t1;
}

void append_clipped_pieces(const std::vector<Vec2>& chain, Category cat, const BevGridSpec& grid,
                           int n_points, std::vector<PolylineElement>& out) {
  const auto pieces = geometry::clip_polyline_to_rect(chain, -0.5 * grid.x_extent,
                                                      0.5 * grid.x_extent, -0.5 * grid.y_extent,
                                                      0.5 * grid.y_extent);
  for (const auto& piece : pieces) {
    if (geometry::polyline_length(piece, false) < kMinPieceLen) continue;
    PolylineElement el;
    el.category = cat;
    el.closed = false;
    el.points = geometry::resample_polyline(piece, n_points, false);
    out.push_back(std::move(el));
  }
}

nlohmann::json spec_to_json(const SceneSpec& s) {
  return nlohmann::json{{"seed", s.seed},
                        {"num_frames", s.num_frames},
                        {"n_points", s.n_points},
                        {"lane_count_min", s.lane_count_min},
                        {"lane_count_max", s.lane_count_max},
                        {"lane_width", s.lane_width},
                        {"curvature_max", s.curvature_max},
                        {"crossings_min", s.crossings_min},
                        {"crossings_max", s.crossings_max},
                        {"centerlines", s.centerlines},
                        {"speed_min", s.speed_min},
                        {"speed_max", s.speed_max},
                        {"occluder_count", s.occluder_count},
                        {"occlusion_density", s.occlusion_density},
                        {"occluder_size_min", s.occluder_size_min},
                        {"occluder_size_max", s.occluder_size_max},
                        {"occluder_speed_min", s.occluder_speed_min},
                        {"occluder_speed_max", s.occluder_speed_max},
                        {"stroke_width", s.stroke_width}};
}

SceneSpec spec_from_json(const nlohmann::json& j) {
  SceneSpec s;
  s.seed = j.at("seed").get<uint64_t>();
  s.num_frames = j.at("num_frames").get<int>();
  s.n_points = j.at("n_points").get<int>();
  s.lane_count_min = j.at("lane_count_min").get<int>();
  s.lane_count_max = j.at("lane_count_max").get<int>();
  s.lane_width = j.at("lane_width").get<double>();
  s.curvature_max = j.at("curvature_max").get<double>();
  s.crossings_min = j.at("crossings_min").get<int>();
  s.crossings_max = j.at("crossings_max").get<int>();
  s.centerlines = j.at("centerlines").get<bool>();
  s.speed_min = j.at("speed_min").get<double>();
  s.speed_max = j.at("speed_max").get<double>();
  s.occluder_count = j.at("occluder_count").get<int>();
  s.occlusion_density = j.at("occlusion_density").get<double>();
  s.occluder_size_min = j.at("occluder_size_min").get<double>();
  s.occluder_size_max = j.at("occluder_size_max").get<double>();
  s.occluder_speed_min = j.at("occluder_speed_min").get<double>();
  s.occluder_speed_max = j.at("occluder_speed_max").get<double>();
  s.stroke_width = j.at("stroke_width").get<double>();
  return s;
}

}  // namespace

void SceneSpec::validate() const {
  require_config(num_frames >= 1, "scene spec: num_frames must be >= 1");
  require_config(n_points >= 2, "scene spec: n_points must be >= 2");
  require_config(occlusion_density >= 0.0 && occlusion_density <= 1.0,
                 "scene spec: occlusion_density must lie in [0,1]");
  require_config(lane_count_min >= 1 && lane_count_max >= lane_count_min,
                 "scene spec: invalid lane count range");
  require_config(lane_width > 0.0, "scene spec: lane width must be positive");
  require_config(occluder_count >= 0, "scene spec: occluder count must be >= 0");
  require_config(occluder_size_max >= occluder_size_min && occluder_size_min > 0.0,
                 "scene spec: invalid occluder size range");
  require_config(speed_max >= speed_min && speed_min >= 0.0, "scene spec: invalid speed range");
  require_config(crossings_min >= 0 && crossings_max >= crossings_min,
                 "scene spec: invalid crossing count range");
}

int SceneSpec::active_occluders() const {
  return static_cast<int>(std::lround(occluder_count * occlusion_density));
}

Vec2 to_ego(Vec2 world_pt, const EgoPose& pose) {
  const double c = std::cos(-pose.heading), s = std::sin(-pose.heading);
  const Vec2 d{world_pt.x - pose.x, world_pt.y - pose.y};
  return {d.x * c - d.y * s, d.x * s + d.y * c};
}

Vec2 to_world(Vec2 ego_pt, const EgoPose& pose) {
  const double c = std::cos(pose.heading), s = std::sin(pose.heading);
  return {pose.x + ego_pt.x * c - ego_pt.y * s, pose.y + ego_pt.x * s + ego_pt.y * c};
}

double occluder_distance(const OccluderState& occ, Vec2 p) {
  const double ch = std::cos(-occ.heading), sh = std::sin(-occ.heading);
  const Vec2 d = p - occ.center;
  const Vec2 local{d.x * ch - d.y * sh, d.x * sh + d.y * ch};
  const double dx = std::max(std::abs(local.x) - occ.half_len, 0.0);
  const double dy = std::max(std::abs(local.y) - occ.half_wid, 0.0);
  return std::hypot(dx, dy);
}

Scene generate_scene(const SceneSpec& spec) {
  spec.validate();
  Scene scene;
  scene.spec = spec;

  SeededStream road_rng(spec.seed, "road");
  SeededStream ego_rng(spec.seed, "ego");
  SeededStream cross_rng(spec.seed, "crossings");

  const double drive_len = spec.num_frames * spec.speed_max;
  const double total_len = 60.0 + drive_len + 60.0;

  // Piecewise-constant-curvature skeleton.
  std::vector<PathPoint> path;
  {
    Vec2 p{0.0, 0.0};
    double heading = road_rng.uniform(0.0, 2.0 * M_PI);
    double remaining = total_len;
    while (remaining > 0.0) {
      const double seg_len = std::min(remaining, road_rng.uniform(30.0, 60.0));
      const double curvature = road_rng.uniform(-spec.curvature_max, spec.curvature_max);
      const int steps = static_cast<int>(std::ceil(seg_len / kPathStep));
      for (int i = 0; i < steps; ++i) {
        path.push_back({p, heading});
        p = p + Vec2{std::cos(heading), std::sin(heading)} * kPathStep;
        heading += curvature * kPathStep;
      }
      remaining -= seg_len;
    }
    path.push_back({p, heading});
  }

  const int lane_count = static_cast<int>(road_rng.uniform_int(spec.lane_count_min, spec.lane_count_max));
  const double half_width = 0.5 * lane_count * spec.lane_width;

  auto add_chain = [&](double offset, Category cat) {
    PolylineElement el;
    el.category = cat;
    el.closed = false;
    el.points = offset_chain(path, offset);
    scene.map_world.push_back(std::move(el));
  };
  add_chain(-half_width, Category::boundary);
  add_chain(half_width, Category::boundary);
  for (int i = 1; i < lane_count; ++i)
    add_chain(-half_width + i * spec.lane_width, Category::divider);
  if (spec.centerlines)
    for (int i = 0; i < lane_count; ++i)
      add_chain(-half_width + (i + 0.5) * spec.lane_width, Category::centerline);

  // Pedestrian crossings: rectangles spanning the road at separated stations.
  const int n_cross = static_cast<int>(cross_rng.uniform_int(spec.crossings_min, spec.crossings_max));
  std::vector<double> stations;
  for (int i = 0; i < n_cross; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < 32 && !placed; ++attempt) {
      const double s = cross_rng.uniform(40.0, total_len - 40.0);
      bool ok = true;
      for (double other : stations) ok = ok && std::abs(other - s) > 15.0;
      if (!ok) continue;
      stations.push_back(s);
      placed = true;
    }
  }
  std::sort(stations.begin(), stations.end());
  for (double s : stations) {
    const PathPoint& pp = path_at(path, s);
    const Vec2 tangent{std::cos(pp.heading), std::sin(pp.heading)};
    const Vec2 nrm = normal_of(pp.heading);
    const double a = 0.5 * cross_rng.uniform(3.0, 4.5);
    const double b = half_width + 0.5;
    PolylineElement el;
    el.category = Category::pedestrian_crossing;
    el.closed = true;
    el.points = {pp.p - tangent * a - nrm * b, pp.p + tangent * a - nrm * b,
                 pp.p + tangent * a + nrm * b, pp.p - tangent * a + nrm * b};
    scene.map_world.push_back(std::move(el));
  }

  // Ego trajectory: follows one lane with a small lateral jitter.
  const int ego_lane = static_cast<int>(ego_rng.uniform_int(0, lane_count - 1));
  const double ego_offset =
      -half_width + (ego_lane + 0.5) * spec.lane_width + ego_rng.uniform(-0.3, 0.3);
  double arc = 60.0;
  for (int t = 0; t < spec.num_frames; ++t) {
    const PathPoint& pp = path_at(path, arc);
    const Vec2 pos = pp.p + normal_of(pp.heading) * ego_offset;
    scene.ego.push_back({pos.x, pos.y, pp.heading});
    arc += ego_rng.uniform(spec.speed_min, spec.speed_max);
  }

  // Occluders: each draws from its own named stream so that occluder i is
  // independent of how many others exist.
  const int n_occ = spec.active_occluders();
  const double ego_span = 60.0 + drive_len;
  for (int i = 0; i < n_occ; ++i) {
    SeededStream orng(spec.seed, "occluder/" + std::to_string(i));
    const double half_len = 0.5 * orng.uniform(spec.occluder_size_min, spec.occluder_size_max);
    const double half_wid = 0.5 * orng.uniform(1.8, 2.8);
    const double u = orng.u01();
    double offset;
    if (u < 0.4) {
      offset = ego_offset + orng.uniform(-0.6, 0.6);  // ego lane
    } else if (u < 0.8) {
      const double side = orng.bernoulli(0.5) ? 1.0 : -1.0;
      offset = ego_offset + side * spec.lane_width + orng.uniform(-0.5, 0.5);
    } else {
      const double side = orng.bernoulli(0.5) ? 1.0 : -1.0;
      offset = side * (half_width + orng.uniform(0.5, 3.0));
    }
    const double dir = orng.bernoulli(0.5) ? 1.0 : -1.0;
    const double speed = orng.uniform(spec.occluder_speed_min, spec.occluder_speed_max);
    const double a0 = orng.uniform(20.0, ego_span + 40.0);
    std::vector<OccluderState> states;
    states.reserve(static_cast<size_t>(spec.num_frames));
    for (int t = 0; t < spec.num_frames; ++t) {
      const double a = std::clamp(a0 + dir * speed * t, 0.0, total_len - 1.0);
      const PathPoint& pp = path_at(path, a);
      OccluderState st;
      st.center = pp.p + normal_of(pp.heading) * offset;
      st.heading = dir > 0 ? pp.heading : pp.heading + M_PI;
      st.half_len = half_len;
      st.half_wid = half_wid;
      states.push_back(st);
    }
    scene.occluders.push_back(std::move(states));
  }
  return scene;
}

FrameObservation render_frame(const Scene& scene, int t, const BevGridSpec& grid) {
  grid.validate();
  if (t < 1 || t > scene.spec.num_frames)
    throw std::out_of_range("render_frame: frame index out of range");
  const EgoPose& pose = scene.ego[static_cast<size_t>(t - 1)];
  const int n_points = scene.spec.n_points;

  FrameObservation obs;
  obs.ego_pose = pose;

  // Ground truth in the ego frame, clipped to the BEV extent.
  const double xmin = -0.5 * grid.x_extent, xmax = 0.5 * grid.x_extent;
  const double ymin = -0.5 * grid.y_extent, ymax = 0.5 * grid.y_extent;
  for (const PolylineElement& el : scene.map_world) {
    std::vector<Vec2> ego_pts(el.points.size());
    for (size_t i = 0; i < el.points.size(); ++i) ego_pts[i] = to_ego(el.points[i], pose);
    if (el.closed) {
      bool all_inside = true;
      for (const Vec2& p : ego_pts)
        all_inside = all_inside && p.x >= xmin && p.x <= xmax && p.y >= ymin && p.y <= ymax;
      if (all_inside) {
        PolylineElement out;
        out.category = el.category;
        out.closed = true;
        out.points = geometry::resample_polyline(ego_pts, n_points, true);
        obs.full_gt.push_back(std::move(out));
        continue;
      }
      ego_pts.push_back(ego_pts.front());  // open the ring for clipping
    }
    append_clipped_pieces(ego_pts, el.category, grid, n_points, obs.full_gt);
  }

  // Keep the longest elements when over capacity.
  if (static_cast<int>(obs.full_gt.size()) > kMaxElementsPerFrame) {
    std::vector<size_t> order(obs.full_gt.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
      return geometry::polyline_length(obs.full_gt[a].points, obs.full_gt[a].closed) >
             geometry::polyline_length(obs.full_gt[b].points, obs.full_gt[b].closed);
    });
    order.resize(kMaxElementsPerFrame);
    std::sort(order.begin(), order.end());
    std::vector<PolylineElement> kept;
    kept.reserve(order.size());
    for (size_t idx : order) kept.push_back(std::move(obs.full_gt[idx]));
    obs.full_gt = std::move(kept);
  }

  // Occluder footprints in the ego frame.
  std::vector<OccluderState> occ_ego;
  for (const auto& occ : scene.occluders) {
    const OccluderState& st = occ[static_cast<size_t>(t - 1)];
    OccluderState e = st;
    e.center = to_ego(st.center, pose);
    e.heading = st.heading - pose.heading;
    occ_ego.push_back(e);
    obs.nearest_occluder_distance =
        std::min(obs.nearest_occluder_distance, occluder_distance(e, {0.0, 0.0}));
  }

  // Visibility: a cell is hidden when the sight line from the ego origin to
  // its center crosses any occluder footprint.
  std::vector<uint8_t> visible(static_cast<size_t>(grid.h) * grid.w, 1);
  for (int r = 0; r < grid.h; ++r) {
    for (int c = 0; c < grid.w; ++c) {
      const Vec2 center = geometry::grid_to_world({r + 0.5, c + 0.5}, grid);
      for (const auto& occ : occ_ego) {
        if (segment_hits_box({0.0, 0.0}, center, occ)) {
          visible[static_cast<size_t>(r) * grid.w + c] = 0;
          break;
        }
      }
    }
  }

  const auto masks = geometry::rasterize(obs.full_gt, grid, scene.spec.stroke_width);
  obs.observation = Tensor<float>::zeros({grid.h, grid.w, kObsChannels});
  for (int r = 0; r < grid.h; ++r)
    for (int c = 0; c < grid.w; ++c) {
      const size_t cell = static_cast<size_t>(r) * grid.w + c;
      float* px = obs.observation.ptr() + (static_cast<int64_t>(r) * grid.w + c) * kObsChannels;
      const float vis = static_cast<float>(visible[cell]);
      for (int k = 0; k < geometry::kNumCategories; ++k)
        px[k] = static_cast<float>(masks[static_cast<size_t>(k)][cell]) * vis;
      px[geometry::kNumCategories] = vis;
    }

  // Visible ground truth: maximal runs of points whose cells are visible.
  for (const PolylineElement& el : obs.full_gt) {
    std::vector<bool> pt_vis(el.points.size());
    bool all = true;
    for (size_t i = 0; i < el.points.size(); ++i) {
      const auto gc = geometry::world_to_grid(el.points[i], grid);
      const int r = std::clamp(static_cast<int>(gc.row), 0, grid.h - 1);
      const int c = std::clamp(static_cast<int>(gc.col), 0, grid.w - 1);
      pt_vis[i] = visible[static_cast<size_t>(r) * grid.w + c] != 0;
      all = all && pt_vis[i];
    }
    if (all) {
      obs.visible_gt.push_back(el);
      continue;
    }
    std::vector<Vec2> run;
    auto flush = [&]() {
      if (run.size() >= 2) {
        PolylineElement piece;
        piece.category = el.category;
        piece.closed = false;
        piece.points = geometry::resample_polyline(run, n_points, false);
        obs.visible_gt.push_back(std::move(piece));
      }
      run.clear();
    };
    for (size_t i = 0; i < el.points.size(); ++i) {
      if (pt_vis[i]) run.push_back(el.points[i]);
      else flush();
    }
    flush();
  }

  return obs;
}

Dataset build_dataset(const std::vector<SceneSpec>& specs, const BevGridSpec& grid,
                      int n_workers) {
  grid.validate();
  Dataset ds;
  ds.grid = grid;
  ds.scenes.resize(specs.size());
  ds.frames.resize(specs.size());
  std::atomic<size_t> next{0};
  auto work = [&]() {
    while (true) {
      const size_t i = next.fetch_add(1);
      if (i >= specs.size()) break;
      ds.scenes[i] = generate_scene(specs[i]);
      auto& frames = ds.frames[i];
      frames.reserve(static_cast<size_t>(specs[i].num_frames));
      for (int t = 1; t <= specs[i].num_frames; ++t)
        frames.push_back(render_frame(ds.scenes[i], t, grid));
    }
  };
  if (n_workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < n_workers; ++w) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }
  return ds;
}

std::vector<FrameRef> occlusion_split(const Dataset& ds, double radius) {
  require_config(radius > 0.0, "occlusion_split: radius must be positive");
  std::vector<FrameRef> out;
  for (size_t s = 0; s < ds.frames.size(); ++s)
    for (size_t f = 0; f < ds.frames[s].size(); ++f)
      if (ds.frames[s][f].nearest_occluder_distance <= radius)
        out.push_back({static_cast<int>(s), static_cast<int>(f) + 1});
  return out;
}

// --- serialization -----------------------------------------------------------

namespace {

constexpr char kObsMagic[4] = {'M', 'C', 'O', 'B'};
constexpr uint32_t kDatasetVersion = 1;

std::string scene_stem(size_t idx) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "scene_%04zu", idx);
  return buf;
}

double sanitize_inf(double v) { return std::isinf(v) ? 1e30 : v; }
double restore_inf(double v) { return v >= 1e30 ? kFarAway : v; }

void write_gt_file(const std::filesystem::path& p,
                   const std::vector<FrameObservation>& frames, bool full) {
  std::ofstream os(p);
  require(os.good(), "cannot open " + p.string());
  std::vector<geometry::ElementRecord> recs;
  for (size_t f = 0; f < frames.size(); ++f) {
    const auto& els = full ? frames[f].full_gt : frames[f].visible_gt;
    for (const auto& el : els) {
      geometry::ElementRecord r;
      r.element = el;
      r.frame = static_cast<int>(f) + 1;
      recs.push_back(std::move(r));
    }
  }
  geometry::write_elements_jsonl(os, recs);
}

std::vector<std::vector<PolylineElement>> read_gt_file(const std::filesystem::path& p,
                                                       int num_frames) {
  std::ifstream is(p);
  if (!is.good()) throw FormatError("missing dataset file: " + p.string());
  auto recs = geometry::read_elements_jsonl(is);
  std::vector<std::vector<PolylineElement>> per_frame(static_cast<size_t>(num_frames));
  for (auto& r : recs) {
    if (r.frame < 1 || r.frame > num_frames)
      throw FormatError("ground-truth record with out-of-range frame in " + p.string());
    per_frame[static_cast<size_t>(r.frame - 1)].push_back(std::move(r.element));
  }
  return per_frame;
}

}  // namespace

void export_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["format"] = "mapclip-dataset";
  manifest["version"] = kDatasetVersion;
  manifest["grid"] = {{"h", ds.grid.h},
                      {"w", ds.grid.w},
                      {"x_extent", ds.grid.x_extent},
                      {"y_extent", ds.grid.y_extent}};
  nlohmann::json specs = nlohmann::json::array();
  for (const auto& sc : ds.scenes) specs.push_back(spec_to_json(sc.spec));
  manifest["specs"] = std::move(specs);
  {
    std::ofstream os(dir / "manifest.json");
    require(os.good(), "cannot write manifest in " + dir.string());
    os << manifest.dump(2) << "\n";
  }

  for (size_t i = 0; i < ds.scenes.size(); ++i) {
    const Scene& sc = ds.scenes[i];
    const auto& frames = ds.frames[i];
    const std::string stem = scene_stem(i);

    nlohmann::json meta;
    nlohmann::json ego = nlohmann::json::array();
    for (const auto& e : sc.ego) ego.push_back({e.x, e.y, e.heading});
    meta["ego"] = std::move(ego);
    nlohmann::json nearest = nlohmann::json::array();
    for (const auto& f : frames) nearest.push_back(sanitize_inf(f.nearest_occluder_distance));
    meta["nearest_occluder_distance"] = std::move(nearest);
    nlohmann::json occs = nlohmann::json::array();
    for (const auto& occ : sc.occluders) {
      nlohmann::json states = nlohmann::json::array();
      for (const auto& st : occ)
        states.push_back({st.center.x, st.center.y, st.heading, st.half_len, st.half_wid});
      occs.push_back(std::move(states));
    }
    meta["occluders"] = std::move(occs);
    {
      std::ofstream os(dir / (stem + ".meta.json"));
      os << meta.dump(2) << "\n";
    }

    {
      std::ofstream os(dir / (stem + ".map.jsonl"));
      std::vector<geometry::ElementRecord> recs;
      for (const auto& el : sc.map_world) recs.push_back({el, -1, -1.0});
      geometry::write_elements_jsonl(os, recs);
    }
    write_gt_file(dir / (stem + ".gt_full.jsonl"), frames, true);
    write_gt_file(dir / (stem + ".gt_visible.jsonl"), frames, false);

    {
      std::ofstream os(dir / (stem + ".obs.bin"), std::ios::binary);
      os.write(kObsMagic, 4);
      const uint32_t version = kDatasetVersion;
      os.write(reinterpret_cast<const char*>(&version), sizeof(version));
      const int64_t dims[4] = {static_cast<int64_t>(frames.size()), ds.grid.h, ds.grid.w,
                               kObsChannels};
      os.write(reinterpret_cast<const char*>(dims), sizeof(dims));
      for (const auto& f : frames)
        os.write(reinterpret_cast<const char*>(f.observation.ptr()),
                 static_cast<std::streamsize>(f.observation.numel() * sizeof(float)));
    }
  }
}

Dataset import_dataset(const std::filesystem::path& dir) {
  std::ifstream mf(dir / "manifest.json");
  if (!mf.good()) throw FormatError("dataset manifest not found in " + dir.string());
  nlohmann::json manifest;
  try {
    mf >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("dataset manifest is corrupt: ") + e.what());
  }
  if (!manifest.contains("format") || manifest["format"] != "mapclip-dataset")
    throw FormatError("dataset manifest: wrong format tag");
  if (manifest.at("version").get<uint32_t>() != kDatasetVersion)
    throw FormatError("dataset manifest: unsupported version");

  Dataset ds;
  ds.grid.h = manifest.at("grid").at("h").get<int>();
  ds.grid.w = manifest.at("grid").at("w").get<int>();
  ds.grid.x_extent = manifest.at("grid").at("x_extent").get<double>();
  ds.grid.y_extent = manifest.at("grid").at("y_extent").get<double>();

  const auto& specs = manifest.at("specs");
  ds.scenes.resize(specs.size());
  ds.frames.resize(specs.size());
  for (size_t i = 0; i < specs.size(); ++i) {
    Scene& sc = ds.scenes[i];
    sc.spec = spec_from_json(specs[i]);
    const std::string stem = scene_stem(i);

    std::ifstream metas(dir / (stem + ".meta.json"));
    if (!metas.good()) throw FormatError("missing dataset file: " + stem + ".meta.json");
    nlohmann::json meta;
    try {
      metas >> meta;
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(stem + ".meta.json is corrupt: " + e.what());
    }
    for (const auto& e : meta.at("ego"))
      sc.ego.push_back({e[0].get<double>(), e[1].get<double>(), e[2].get<double>()});
    for (const auto& occ : meta.at("occluders")) {
      std::vector<OccluderState> states;
      for (const auto& st : occ) {
        OccluderState o;
        o.center = {st[0].get<double>(), st[1].get<double>()};
        o.heading = st[2].get<double>();
        o.half_len = st[3].get<double>();
        o.half_wid = st[4].get<double>();
        states.push_back(o);
      }
      sc.occluders.push_back(std::move(states));
    }

    {
      std::ifstream is(dir / (stem + ".map.jsonl"));
      if (!is.good()) throw FormatError("missing dataset file: " + stem + ".map.jsonl");
      for (auto& r : geometry::read_elements_jsonl(is)) sc.map_world.push_back(std::move(r.element));
    }

    const int num_frames = sc.spec.num_frames;
    require(static_cast<int>(sc.ego.size()) == num_frames,
            "dataset: ego trajectory length mismatch in " + stem);
    auto gt_full = read_gt_file(dir / (stem + ".gt_full.jsonl"), num_frames);
    auto gt_vis = read_gt_file(dir / (stem + ".gt_visible.jsonl"), num_frames);

    std::ifstream ob(dir / (stem + ".obs.bin"), std::ios::binary);
    if (!ob.good()) throw FormatError("missing dataset file: " + stem + ".obs.bin");
    char magic[4];
    ob.read(magic, 4);
    if (ob.gcount() != 4 || std::memcmp(magic, kObsMagic, 4) != 0)
      throw FormatError(stem + ".obs.bin: bad magic header");
    uint32_t version = 0;
    ob.read(reinterpret_cast<char*>(&version), sizeof(version));
    if (version != kDatasetVersion) throw FormatError(stem + ".obs.bin: unsupported version");
    int64_t dims[4];
    ob.read(reinterpret_cast<char*>(dims), sizeof(dims));
    if (ob.gcount() != sizeof(dims)) throw FormatError(stem + ".obs.bin: truncated header");
    if (dims[0] != num_frames || dims[1] != ds.grid.h || dims[2] != ds.grid.w ||
        dims[3] != kObsChannels)
      throw FormatError(stem + ".obs.bin: dimension mismatch with manifest");

    auto& frames = ds.frames[i];
    for (int t = 0; t < num_frames; ++t) {
      FrameObservation f;
      f.ego_pose = sc.ego[static_cast<size_t>(t)];
      f.observation = Tensor<float>::zeros({ds.grid.h, ds.grid.w, kObsChannels});
      ob.read(reinterpret_cast<char*>(f.observation.ptr()),
              static_cast<std::streamsize>(f.observation.numel() * sizeof(float)));
      if (ob.gcount() != static_cast<std::streamsize>(f.observation.numel() * sizeof(float)))
        throw FormatError(stem + ".obs.bin: truncated, frame " + std::to_string(t + 1) +
                          " is missing");
      f.full_gt = std::move(gt_full[static_cast<size_t>(t)]);
      f.visible_gt = std::move(gt_vis[static_cast<size_t>(t)]);
      f.nearest_occluder_distance =
          restore_inf(meta.at("nearest_occluder_distance")[static_cast<size_t>(t)].get<double>());
      frames.push_back(std::move(f));
    }
  }
  return ds;
}

}  // namespace mapclip::synthworld
