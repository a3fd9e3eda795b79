#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "geometry.hpp"

namespace ecco {

struct MapField {
  std::vector<Vec2> pos;
  std::vector<Vec2> dir;  // unit tangents

  int size() const { return static_cast<int>(pos.size()); }
};

struct AgentTrack {
  int id = 0;
  std::vector<Vec2> pos;       // T = t_in + t_out frames
  std::vector<uint8_t> valid;  // per frame
};

struct Scene {
  std::string scene_id;
  double dt = 0.1;
  std::vector<AgentTrack> agents;
  MapField map;
  std::string split = "train";
};

struct SceneDataset {
  int t_in = 0;
  int t_out = 0;
  std::vector<Scene> scenes;
  std::vector<double> rotations;  // per-scene augmentation angle (0 if off)

  std::vector<int> split_indices(const std::string& split) const;
};

struct GeneratorConfig {
  std::string family = "mixed";  // cv | arc | intersection | mixed
  int scenes = 100;
  int t_in = 8;
  int t_out = 8;
  double dt = 0.1;
  int agents_min = 2;
  int agents_max = 4;
  double speed_min = 4.0;
  double speed_max = 9.0;
  double noise_sigma = 0.05;
  bool augment_rotations = false;
  double turn_rate_min = 0.2;  // rad/s (arc family)
  double turn_rate_max = 0.6;
  double val_fraction = 0.1;
  double test_fraction = 0.1;
  uint64_t seed = 1;
  // intersection geometry
  double approach_len = 22.0;
  double turn_radius = 7.0;
  double lane_offset = 1.6;
  double map_spacing = 4.0;

  void validate() const;
};

// Three scenario families, reproducible from the seed: (a) constant-velocity
// agents, (b) constant-turn-rate arcs (left/right in equal proportion),
// (c) intersection scenes following lane polylines emitted as the map.
SceneDataset generate_synthetic(const GeneratorConfig& cfg);

// Line-delimited scene files: header "ecco-scenes v1", one JSON record per
// line.
void save_scenes(const SceneDataset& ds, const std::string& path);
SceneDataset load_scenes(const std::string& path);

struct MetricReport {
  double ade = 0.0;
  double fde = 0.0;
  std::vector<std::pair<int, double>> de_at;  // (1-based timestep, error)
  std::vector<long> de_counts;
  long count = 0;       // valid agent-steps in ADE
  long fde_count = 0;   // valid agents at the final step
};

// pred/truth are n x t flattened row-major Vec2 arrays; mask is n x t.
MetricReport compute_metrics(const std::vector<Vec2>& pred,
                             const std::vector<Vec2>& truth,
                             const std::vector<uint8_t>& mask, int n, int t,
                             const std::vector<int>& horizons);

// Weighted merge of per-scene reports.
MetricReport merge_metrics(const std::vector<MetricReport>& parts);

using Prediction = std::vector<std::vector<Vec2>>;  // per agent, t_out steps

// x_{t+k} = x_t + k dt v_t from the last two valid history frames.
Prediction baseline_constant_velocity(const Scene& scene, int t_in, int t_out);

// Reference trajectory library for the nearest-neighbor baseline.
struct TrajLibrary {
  std::vector<std::vector<Vec2>> history;  // translated to start at origin
  std::vector<std::vector<Vec2>> future;   // same translation
};
TrajLibrary build_traj_library(const SceneDataset& ds,
                               const std::string& split, int t_in, int t_out);
Prediction baseline_nearest_neighbor(const TrajLibrary& lib,
                                     const Scene& scene, int t_in, int t_out);

// Truth/mask extraction for the future window of a scene.
void future_arrays(const Scene& scene, int t_in, int t_out,
                   std::vector<Vec2>& truth, std::vector<uint8_t>& mask);
std::vector<Vec2> flatten_prediction(const Prediction& pred);

// Rotates positions, velocities-by-construction, and map directions about
// the origin.
Scene rotate_scene(const Scene& s, double theta);

}  // namespace ecco
