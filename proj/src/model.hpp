#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "data.hpp"
#include "diff.hpp"

namespace ecco {

struct ModelConfig {
  int t_in = 20;
  int t_out = 30;
  double dt = 0.1;
  int k_theta = 16;
  int k_r = 3;
  int k_reg = 16;
  double R = 40.0;
  std::vector<int> encode_channels = {8, 16};  // c1, c2 for the 3 encode convs
  std::vector<int> predict_channels = {8, 8};  // the l+1 prediction convs
  bool use_map = true;
  bool equivariant = true;  // false: weight-sharing-disabled ablation
  uint64_t seed = 1;
  double init_expected_neighbors = 9.0;

  // training schedule
  int iterations = 1000;
  int batch_size = 16;
  double base_lr = 1e-3;
  double lr_gamma = 0.95;
  int lr_decay_interval = 300;
  double teacher_forcing_frac = 0.5;
  int val_interval = 50;
  int val_max_scenes = 64;

  void validate() const;
};

struct TrainLogRow {
  int iter = 0;
  double lr = 0;
  double train_loss = 0;
  double val_ade = -1;  // -1 when not evaluated this interval
  double val_fde = -1;
};

// The full network: a velocity-concatenation encoder with map fusion, three
// encode convolutions into rho_reg features, a prediction stack ending in a
// rho_reg -> rho_1 head, and residual prediction over kinematic
// extrapolation, rolled out autoregressively.
class EccoModel {
 public:
  explicit EccoModel(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  ParamRegistry& params() { return reg_; }
  const ParamRegistry& params() const { return reg_; }
  Adam& optimizer() { return adam_; }
  const Adam& optimizer() const { return adam_; }
  Rng& rng() { return rng_; }

  long param_scalar_count() const { return reg_.total_size(); }

  // Free-running rollout from the scene's t_in history frames. Returns
  // n_agents x t_out positions (inactive agents hold their last position).
  Prediction rollout(const Scene& scene) const;

  // Training over the train split of a dataset; returns the log. The
  // on_row callback (if set) observes each logged row.
  std::vector<TrainLogRow> train(
      const SceneDataset& data,
      const std::function<void(const TrainLogRow&)>& on_row = nullptr);

  MetricReport evaluate(const SceneDataset& data, const std::string& split,
                        const std::vector<int>& horizons,
                        double rotate_by = 0.0) const;

  // Encoder output (rho_reg hidden features on active agent points) at the
  // last history frame, and the first-step residual prediction.
  FeatureField encode_field(const Scene& scene) const;
  std::vector<Vec2> predict_delta(const Scene& scene) const;

 private:
  friend struct ModelTestAccess;
  struct ConvBlockDef {
    ConvKernelShape kernel;
    PointwiseLinear post;
    RepSpec in, out;
    std::vector<double> quad;       // entry quadrature of in
    std::vector<double> post_quad;  // entry quadrature of out
    int ring_p = -1, bull_p = -1, post_p = -1, bias_p = -1;
    bool map_queries = false;  // map nodes are queries at this layer
    bool agents_only_sources = false;
  };

  struct Snapshot {
    std::vector<MaterializedKernel> mk;
    std::vector<std::vector<double>> E;
    std::vector<double> head_E;
  };

  struct StepPlan {
    std::shared_ptr<ConvPlan> all_to_all;
    std::shared_ptr<ConvPlan> all_to_agents;
    std::shared_ptr<ConvPlan> agents_to_agents;
    std::vector<double> features;  // (n_active + n_map) x in_dim
    std::vector<Vec2> x_tilde;     // per active agent
    int n_active = 0;
  };

  void build_layers();
  void init_params();
  Snapshot snapshot() const;

  // One prediction step on the current trajectories; returns the node id of
  // predicted positions (n_active x 2) on the tape.
  int record_step(Tape& tape, const Snapshot& snap, const StepPlan& sp) const;

  StepPlan plan_step(const std::vector<std::vector<Vec2>>& traj,
                     const std::vector<std::vector<uint8_t>>& valid,
                     const std::vector<int>& active, const MapField& map,
                     int now) const;

  double train_scene(const Scene& scene, const Snapshot& snap,
                     bool teacher_forced, Tape& tape) const;

  ModelConfig cfg_;
  RepSpec input_spec_;
  std::vector<ConvBlockDef> blocks_;
  PointwiseLinear head_;
  std::vector<double> head_quad_;
  int head_p = -1;
  ParamRegistry reg_;
  Adam adam_;
  Rng rng_;
};

// model config <-> flat dotted keys (used by run configs and checkpoints)
std::vector<std::pair<std::string, std::string>> model_config_kv(
    const ModelConfig& cfg);
ModelConfig model_config_from_kv(
    const std::function<const std::string*(const std::string&)>& lookup);

}  // namespace ecco
