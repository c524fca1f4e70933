#pragma once

// Deterministic synthetic driving world: a static vectorized map (lane
// boundaries, dividers, pedestrian crossings, optional centerlines), an ego
// trajectory along the road, and moving rectangular occluders that cast
// line-of-sight shadows over the BEV observation.

#include <filesystem>
#include <limits>
#include <vector>

#include "mapclip/geometry.hpp"
#include "mapclip/tensor.hpp"

namespace mapclip::synthworld {

inline constexpr int kObsChannels = 5;  // 4 category rasters + visibility mask

struct SceneSpec {
  uint64_t seed = 0;
  int num_frames = 11;
  int n_points = 10;  // points per map element

  // Road topology
  int lane_count_min = 2;
  int lane_count_max = 3;
  double lane_width = 3.5;
  double curvature_max = 0.02;  // 1/m
  int crossings_min = 1;
  int crossings_max = 3;
  bool centerlines = false;

  // Ego motion, meters per frame
  double speed_min = 4.0;
  double speed_max = 7.0;

  // Occluders
  int occluder_count = 26;  // candidate pool; active count = round(count * density)
  double occlusion_density = 0.5;
  double occluder_size_min = 3.0;
  double occluder_size_max = 7.0;
  double occluder_speed_min = 0.0;
  double occluder_speed_max = 8.0;  // m per frame, along the road

  double stroke_width = 1.0;  // raster stroke, meters

  void validate() const;
  int active_occluders() const;
};

struct EgoPose {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;
};

// Oriented rectangle footprint at one frame.
struct OccluderState {
  geometry::Vec2 center;
  double heading = 0.0;
  double half_len = 1.0;
  double half_wid = 1.0;
};

struct Scene {
  SceneSpec spec;
  std::vector<EgoPose> ego;                           // [num_frames]
  std::vector<geometry::PolylineElement> map_world;   // dense chains, world frame
  std::vector<std::vector<OccluderState>> occluders;  // [occluder][frame]
};

struct FrameObservation {
  EgoPose ego_pose;
  numerics::Tensor<float> observation;  // [H, W, kObsChannels]
  std::vector<geometry::PolylineElement> visible_gt;
  std::vector<geometry::PolylineElement> full_gt;
  double nearest_occluder_distance = std::numeric_limits<double>::infinity();
};

// Largest number of ground-truth elements emitted per frame (keeps the
// set-prediction capacity contract with the model's query count).
inline constexpr int kMaxElementsPerFrame = 12;

Scene generate_scene(const SceneSpec& spec);

FrameObservation render_frame(const Scene& scene, int t /*1-based*/,
                              const geometry::BevGridSpec& grid);

// World -> ego-frame transform for one pose.
geometry::Vec2 to_ego(geometry::Vec2 world_pt, const EgoPose& pose);
geometry::Vec2 to_world(geometry::Vec2 ego_pt, const EgoPose& pose);

double occluder_distance(const OccluderState& occ, geometry::Vec2 p);

struct Dataset {
  geometry::BevGridSpec grid;
  std::vector<Scene> scenes;
  std::vector<std::vector<FrameObservation>> frames;  // [scene][frame]
};

Dataset build_dataset(const std::vector<SceneSpec>& specs, const geometry::BevGridSpec& grid,
                      int n_workers = 1);

struct FrameRef {
  int scene = 0;
  int frame = 0;  // 1-based
  bool operator==(const FrameRef&) const = default;
};

// Frames whose nearest occluder approaches the ego within `radius` meters.
std::vector<FrameRef> occlusion_split(const Dataset& ds, double radius);

void export_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset import_dataset(const std::filesystem::path& dir);

}  // namespace mapclip::synthworld
