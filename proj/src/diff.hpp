#pragma once

#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ops.hpp"

namespace ecco {

// Ordered registry of trainable parameter arrays. Order is construction
// order and is part of the determinism contract.
struct ParamRegistry {
  struct Entry {
    std::string name;
    std::vector<double> value;
  };
  std::vector<Entry> entries;

  int add(std::string name, std::vector<double> init) {
    entries.push_back({std::move(name), std::move(init)});
    return static_cast<int>(entries.size()) - 1;
  }
  int add(std::string name, size_t n, double v = 0.0) {
    return add(std::move(name), std::vector<double>(n, v));
  }
  size_t total_size() const {
    size_t n = 0;
    for (const auto& e : entries) n += e.value.size();
    return n;
  }
};

// References tying tape operations to layer structure and the current
// parameter snapshot. The referenced objects must outlive the tape.
struct ConvLayerRef {
  const ConvKernelShape* shape = nullptr;
  const MaterializedKernel* mk = nullptr;
  std::shared_ptr<const ConvPlan> plan;
  const std::vector<double>* in_quad = nullptr;
  int ring_param = -1;
  int bull_param = -1;
};

struct LinLayerRef {
  const PointwiseLinear* shape = nullptr;
  const std::vector<double>* E = nullptr;
  const std::vector<double>* in_quad = nullptr;
  int param = -1;
};

// Constant-on-the-circle bias for pure rho_reg fields: one scalar per copy.
struct BiasLayerRef {
  int k_reg = 1;
  int channels = 0;
  const double* b = nullptr;
  int param = -1;
};

struct ExtrapPlan {
  struct Agent {
    int offset;  // index of the agent's first position (in Vec2 units)
    int count;   // usable trailing positions (>= 1)
  };
  std::vector<Agent> agents;
};

class TapeOp;

// Records a forward computation over dense double buffers and plays it
// backwards to produce gradients for every registered parameter reachable
// from the loss, plus any leaf marked as requiring gradients.
class Tape {
 public:
  explicit Tape(const ParamRegistry* reg = nullptr);
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  int leaf(std::vector<double> v, bool requires_grad = false);
  int leaf(std::span<const double> v, bool requires_grad = false);

  std::span<const double> value(int node) const;
  std::span<const double> grad(int node) const;
  int node_size(int node) const;

  int conv(const ConvLayerRef& layer, int src);
  int pointwise(const LinLayerRef& layer, int src);
  int bias_reg(const BiasLayerRef& layer, int src);
  int leaky_relu(int src);
  int add(int a, int b);
  int add_const(int a, std::span<const double> c);
  int scale(int a, double s);
  int kernel_eval(const ConvLayerRef& layer, Vec2 dx, InterpMode mode);
  int torus_apply_op(int m_node, int f_node, int k);
  int extrapolate(int pos_node, ExtrapPlan plan);
  // sum_i mask_i * (pred_i - target_i)^2, a scalar node
  int masked_sq_err(int pred, std::span<const double> target,
                    std::span<const double> mask);
  int sum(const std::vector<int>& scalars);
  // sum_i w_i * a_i, a scalar node
  int dot_const(int a, std::span<const double> w);

  // One reverse sweep from a scalar loss node. Parameter gradients are
  // accumulated into param_grads() (sized like the registry).
  void backward(int loss_node);

  const std::vector<std::vector<double>>& param_grads() const {
    return param_grads_;
  }

 private:
  friend class TapeOp;
  struct Node {
    std::vector<double> val;
    std::vector<double> grad;
    bool requires_grad = false;
  };

  int push_node(std::vector<double> v, bool requires_grad);
  void ensure_grads();
  void finalize_param_grads();

  const ParamRegistry* reg_ = nullptr;
  std::vector<Node> nodes_;
  std::vector<std::unique_ptr<TapeOp>> ops_;
  std::vector<std::vector<double>> param_grads_;

  // Gradients staged in materialized layout, pulled back to parameter
  // layout once per backward sweep.
  struct RingStage {
    const ConvKernelShape* shape;
    std::vector<double> buf;
  };
  struct BullStage {
    const ConvKernelShape* shape;
    std::vector<double> buf;
  };
  struct LinStage {
    const PointwiseLinear* shape;
    std::vector<double> buf;
  };
  std::map<int, RingStage> stage_ring_;
  std::map<int, BullStage> stage_bull_;
  std::map<int, LinStage> stage_lin_;

  std::vector<double>& ring_stage(const ConvLayerRef& l);
  std::vector<double>& bull_stage(const ConvLayerRef& l);
  std::vector<double>& lin_stage(const LinLayerRef& l);
};

// Adam with the paper schedule: lr = base_lr * gamma^(step / decay_interval),
// integer division.
struct AdamConfig {
  double base_lr = 1e-3;
  double gamma = 0.95;
  int decay_interval = 300;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam() = default;
  Adam(AdamConfig cfg, const ParamRegistry& reg);

  double lr() const;
  long step_count() const { return step_; }
  const AdamConfig& config() const { return cfg_; }

  void step(ParamRegistry& reg, const std::vector<std::vector<double>>& grads);

  const std::vector<std::vector<double>>& m() const { return m_; }
  const std::vector<std::vector<double>>& v() const { return v_; }
  void restore(std::vector<std::vector<double>> m,
               std::vector<std::vector<double>> v, long step);

 private:
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  long step_ = 0;
};

}  // namespace ecco
