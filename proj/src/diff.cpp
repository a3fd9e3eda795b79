#include "diff.hpp"

#include <cmath>
#include <stdexcept>

namespace ecco {

class TapeOp {
 public:
  virtual ~TapeOp() = default;
  virtual void backward(Tape& t) = 0;

 protected:
  static std::vector<double>& grad(Tape& t, int node) {
    return t.nodes_[node].grad;
  }
  static const std::vector<double>& val(Tape& t, int node) {
    return t.nodes_[node].val;
  }
  static bool wants_grad(Tape& t, int node) {
    return t.nodes_[node].requires_grad;
  }
  static std::vector<double>& rstage(Tape& t, const ConvLayerRef& l) {
    return t.ring_stage(l);
  }
  static std::vector<double>& bstage(Tape& t, const ConvLayerRef& l) {
    return t.bull_stage(l);
  }
  static std::vector<double>& lstage(Tape& t, const LinLayerRef& l) {
    return t.lin_stage(l);
  }
  static std::vector<double>& pgrad(Tape& t, int param) {
    return t.param_grads_[param];
  }
};

namespace {

std::span<double> maybe(std::vector<double>& v, bool want) {
  return want ? std::span<double>(v) : std::span<double>();
}

struct ConvOp final : TapeOp {
  ConvLayerRef layer;
  int in, out;

  void backward(Tape& t) override {
    const bool want_src = wants_grad(t, in);
    const bool want_ring = layer.ring_param >= 0;
    const bool want_bull = layer.bull_param >= 0;
    std::vector<double> empty;
    conv_backward(*layer.mk, *layer.plan, *layer.in_quad, val(t, in),
                  grad(t, out), maybe(grad(t, in), want_src),
                  want_ring ? std::span<double>(rstage(t, layer))
                            : std::span<double>(),
                  want_bull ? std::span<double>(bstage(t, layer))
                            : std::span<double>());
  }
};

struct PointwiseOp final : TapeOp {
  LinLayerRef layer;
  int n = 0;
  int in, out;

  void backward(Tape& t) override {
    const int od = layer.shape->out().dim(), id = layer.shape->in().dim();
    const bool want_in = wants_grad(t, in);
    const bool want_p = layer.param >= 0;
    pointwise_backward(*layer.E, od, id, *layer.in_quad, n, val(t, in),
                       grad(t, out), maybe(grad(t, in), want_in),
                       want_p ? std::span<double>(lstage(t, layer))
                              : std::span<double>());
  }
};

struct BiasOp final : TapeOp {
  BiasLayerRef layer;
  int n = 0;
  int in, out;

  void backward(Tape& t) override {
    auto& ib = grad(t, in);
    const auto& ob = grad(t, out);
    if (wants_grad(t, in))
      for (size_t i = 0; i < ib.size(); ++i) ib[i] += ob[i];
    if (layer.param >= 0) {
      auto& pg = pgrad(t, layer.param);
      const int k = layer.k_reg, ch = layer.channels;
      const int d = k * ch;
      for (int i = 0; i < n; ++i)
        for (int c = 0; c < ch; ++c) {
          double acc = 0.0;
          const double* g = ob.data() + static_cast<size_t>(i) * d + c * k;
          for (int j = 0; j < k; ++j) acc += g[j];
          pg[c] += acc;
        }
    }
  }
};

struct LeakyOp final : TapeOp {
  int in, out;

  void backward(Tape& t) override {
    if (!wants_grad(t, in)) return;
    auto& ib = grad(t, in);
    const auto& ob = grad(t, out);
    const auto& x = val(t, in);
    for (size_t i = 0; i < ib.size(); ++i) ib[i] += ob[i] * leaky_grad(x[i]);
  }
};

struct AddOp final : TapeOp {
  int a, b, out;

  void backward(Tape& t) override {
    const auto& ob = grad(t, out);
    if (wants_grad(t, a)) {
      auto& g = grad(t, a);
      for (size_t i = 0; i < g.size(); ++i) g[i] += ob[i];
    }
    if (wants_grad(t, b)) {
      auto& g = grad(t, b);
      for (size_t i = 0; i < g.size(); ++i) g[i] += ob[i];
    }
  }
};

struct AddConstOp final : TapeOp {
  int a, out;

  void backward(Tape& t) override {
    if (!wants_grad(t, a)) return;
    auto& g = grad(t, a);
    const auto& ob = grad(t, out);
    for (size_t i = 0; i < g.size(); ++i) g[i] += ob[i];
  }
};

struct ScaleOp final : TapeOp {
  int a, out;
  double s;

  void backward(Tape& t) override {
    if (!wants_grad(t, a)) return;
    auto& g = grad(t, a);
    const auto& ob = grad(t, out);
    for (size_t i = 0; i < g.size(); ++i) g[i] += s * ob[i];
  }
};

struct KernelEvalOp final : TapeOp {
  ConvLayerRef layer;
  KernelFootprint fp;
  int out;

  void backward(Tape& t) override {
    const auto& mb = grad(t, out);
    const int mat = layer.mk->od * layer.mk->id;
    if (fp.bullseye) {
      if (layer.bull_param >= 0) {
        auto& st = bstage(t, layer);
        for (int i = 0; i < mat; ++i) st[i] += mb[i];
      }
      return;
    }
    if (layer.ring_param < 0) return;
    auto& st = rstage(t, layer);
    for (int n = 0; n < fp.n; ++n) {
      if (fp.w[n] == 0.0) continue;
      double* dst = st.data() + static_cast<size_t>(fp.node[n]) * mat;
      for (int i = 0; i < mat; ++i) dst[i] += fp.w[n] * mb[i];
    }
  }
};

struct TorusApplyOp final : TapeOp {
  int m_node, f_node, out;
  int k;

  void backward(Tape& t) override {
    const double q = kTwoPi / k;
    const auto& ob = grad(t, out);
    const auto& M = val(t, m_node);
    const auto& f = val(t, f_node);
    if (wants_grad(t, m_node)) {
      auto& mb = grad(t, m_node);
      for (int i = 0; i < k; ++i) {
        const double coef = q * ob[i];
        for (int j = 0; j < k; ++j)
          mb[static_cast<size_t>(i) * k + j] += coef * f[j];
      }
    }
    if (wants_grad(t, f_node)) {
      auto& fb = grad(t, f_node);
      for (int i = 0; i < k; ++i) {
        const double coef = q * ob[i];
        for (int j = 0; j < k; ++j)
          fb[j] += coef * M[static_cast<size_t>(i) * k + j];
      }
    }
  }
};

struct ExtrapOp final : TapeOp {
  ExtrapPlan plan;
  int in, out;

  static int coeffs(int count, double* c) {
    if (count >= 3) {
      c[0] = 2.5;
      c[1] = -2.0;
      c[2] = 0.5;
      return 3;
    }
    if (count == 2) {
      c[0] = 2.0;
      c[1] = -1.0;
      return 2;
    }
    c[0] = 1.0;
    return 1;
  }

  void backward(Tape& t) override {
    if (!wants_grad(t, in)) return;
    auto& ib = grad(t, in);
    const auto& ob = grad(t, out);
    for (size_t a = 0; a < plan.agents.size(); ++a) {
      const auto& ag = plan.agents[a];
      double c[3];
      const int n = coeffs(ag.count, c);
      for (int j = 0; j < n; ++j) {
        const int p = ag.offset + ag.count - 1 - j;
        ib[2 * p] += c[j] * ob[2 * a];
        ib[2 * p + 1] += c[j] * ob[2 * a + 1];
      }
    }
  }
};

struct MaskedSqErrOp final : TapeOp {
  int pred, out;
  std::vector<double> target, mask;

  void backward(Tape& t) override {
    if (!wants_grad(t, pred)) return;
    auto& pb = grad(t, pred);
    const auto& p = val(t, pred);
    const double g = grad(t, out)[0];
    for (size_t i = 0; i < p.size(); ++i)
      pb[i] += 2.0 * g * mask[i] * (p[i] - target[i]);
  }
};

struct SumOp final : TapeOp {
  std::vector<int> terms;
  int out;

  void backward(Tape& t) override {
    const double g = grad(t, out)[0];
    for (int n : terms)
      if (wants_grad(t, n)) grad(t, n)[0] += g;
  }
};

struct DotConstOp final : TapeOp {
  int a, out;
  std::vector<double> w;

  void backward(Tape& t) override {
    if (!wants_grad(t, a)) return;
    auto& g = grad(t, a);
    const double ob = grad(t, out)[0];
    for (size_t i = 0; i < g.size(); ++i) g[i] += ob * w[i];
  }
};

}  // namespace

Tape::Tape(const ParamRegistry* reg) : reg_(reg) {
  if (reg_) param_grads_.resize(reg_->entries.size());
}

Tape::~Tape() = default;

int Tape::push_node(std::vector<double> v, bool requires_grad) {
  nodes_.push_back(Node{std::move(v), {}, requires_grad});
  return static_cast<int>(nodes_.size()) - 1;
}

int Tape::leaf(std::vector<double> v, bool requires_grad) {
  return push_node(std::move(v), requires_grad);
}

int Tape::leaf(std::span<const double> v, bool requires_grad) {
  return push_node(std::vector<double>(v.begin(), v.end()), requires_grad);
}

std::span<const double> Tape::value(int node) const {
  return nodes_[node].val;
}

std::span<const double> Tape::grad(int node) const { return nodes_[node].grad; }

int Tape::node_size(int node) const {
  return static_cast<int>(nodes_[node].val.size());
}

std::vector<double>& Tape::ring_stage(const ConvLayerRef& l) {
  auto it = stage_ring_.find(l.ring_param);
  if (it == stage_ring_.end()) {
    it = stage_ring_
             .emplace(l.ring_param,
                      RingStage{l.shape, std::vector<double>(
                                             l.mk->grid.size(), 0.0)})
             .first;
  }
  return it->second.buf;
}

std::vector<double>& Tape::bull_stage(const ConvLayerRef& l) {
  auto it = stage_bull_.find(l.bull_param);
  if (it == stage_bull_.end()) {
    it = stage_bull_
             .emplace(l.bull_param,
                      BullStage{l.shape, std::vector<double>(
                                             l.mk->bull.size(), 0.0)})
             .first;
  }
  return it->second.buf;
}

std::vector<double>& Tape::lin_stage(const LinLayerRef& l) {
  auto it = stage_lin_.find(l.param);
  if (it == stage_lin_.end()) {
    it = stage_lin_
             .emplace(l.param, LinStage{l.shape, std::vector<double>(
                                                     l.E->size(), 0.0)})
             .first;
  }
  return it->second.buf;
}

int Tape::conv(const ConvLayerRef& layer, int src) {
  std::vector<double> out(
      static_cast<size_t>(layer.plan->n_query) * layer.mk->od, 0.0);
  conv_forward(*layer.mk, *layer.plan, *layer.in_quad, nodes_[src].val, out);
  const int id = push_node(std::move(out), true);
  auto op = std::make_unique<ConvOp>();
  op->layer = layer;
  op->in = src;
  op->out = id;
  ops_.push_back(std::move(op));
  return id;
}

int Tape::pointwise(const LinLayerRef& layer, int src) {
  const int od = layer.shape->out().dim(), idim = layer.shape->in().dim();
  const int n = static_cast<int>(nodes_[src].val.size()) / idim;
  std::vector<double> out(static_cast<size_t>(n) * od, 0.0);
  pointwise_forward(*layer.E, od, idim, *layer.in_quad, n, nodes_[src].val,
                    out);
  const int id = push_node(std::move(out), true);
  auto op = std::make_unique<PointwiseOp>();
  op->layer = layer;
  op->n = n;
  op->in = src;
  op->out = id;
  ops_.push_back(std::move(op));
  return id;
}

int Tape::bias_reg(const BiasLayerRef& layer, int src) {
  const int d = layer.k_reg * layer.channels;
  const int n = static_cast<int>(nodes_[src].val.size()) / d;
  std::vector<double> out = nodes_[src].val;
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < layer.channels; ++c) {
      double* row = out.data() + static_cast<size_t>(i) * d + c * layer.k_reg;
      for (int j = 0; j < layer.k_reg; ++j) row[j] += layer.b[c];
    }
  const int id = push_node(std::move(out), true);
  auto op = std::make_unique<BiasOp>();
  op->layer = layer;
  op->n = n;
  op->in = src;
  op->out = id;
  ops_.push_back(std::move(op));
  return id;
}

int Tape::leaky_relu(int src) {
  std::vector<double> out = nodes_[src].val;
  for (double& v : out) v = leaky(v);
  const int id = push_node(std::move(out), true);
  auto op = std::make_unique<LeakyOp>();
  op->in = src;
  op->out = id;
  ops_.push_back(std::move(op));
  return id;
}

int Tape::add(int a, int b) {
  if (nodes_[a].val.size() != nodes_[b].val.size())
    throw std::invalid_argument("Tape::add: size mismatch");
  std::vector<double> out = nodes_[a].val;
  for (size_t i = 0; i < out.size(); ++i) out[i] += nodes_[b].val[i];
  const int id = push_node(std::move(out), true);
  auto op = std::make_unique<AddOp>();
  op->a = a;
  op->b = b;
  op->out = id;
  ops_.push_back(std::move(op));
  return id;
}

int Tape::add_const(int a, std::span<const double> c) {
  if (nodes_[a].val.size() != c.size())
    throw std::invalid_argument("Tape::add_const: size mismatch");
  std::vector<double> out = nodes_[a].val;
  for (size_t i = 0; i < out.size(); ++i) out[i] += c[i];
  const int id = push_node(std::move(out), true);
  auto op = std::make_unique<AddConstOp>();
  op->a = a;
  op->out = id;
  ops_.push_back(std::move(op));
  return id;
}

int Tape::scale(int a, double s) {
  std::vector<double> out = nodes_[a].val;
  for (double& v : out) v *= s;
  const int id = push_node(std::move(out), true);
  auto op = std::make_unique<ScaleOp>();
  op->a = a;
  op->out = id;
  op->s = s;
  ops_.push_back(std::move(op));
  return id;
}

int Tape::kernel_eval(const ConvLayerRef& layer, Vec2 dx, InterpMode mode) {
  const int mat = layer.mk->od * layer.mk->id;
  std::vector<double> out(static_cast<size_t>(mat), 0.0);
  eval_kernel_cached(*layer.mk, layer.shape->grid(), dx, out, mode);
  const int id = push_node(std::move(out), true);
  auto op = std::make_unique<KernelEvalOp>();
  op->layer = layer;
  op->fp = kernel_footprint(layer.shape->grid(), dx, mode);
  op->out = id;
  ops_.push_back(std::move(op));
  return id;
}

int Tape::torus_apply_op(int m_node, int f_node, int k) {
  if (node_size(m_node) != k * k || node_size(f_node) != k)
    throw std::invalid_argument("torus_apply: size mismatch");
  RegFunction f{std::vector<double>(nodes_[f_node].val)};
  RegFunction o = torus_apply(nodes_[m_node].val, f);
  const int id = push_node(std::move(o.samples), true);
  auto op = std::make_unique<TorusApplyOp>();
  op->m_node = m_node;
  op->f_node = f_node;
  op->out = id;
  op->k = k;
  ops_.push_back(std::move(op));
  return id;
}

int Tape::extrapolate(int pos_node, ExtrapPlan plan) {
  std::vector<double> out(plan.agents.size() * 2, 0.0);
  const auto& p = nodes_[pos_node].val;
  for (size_t a = 0; a < plan.agents.size(); ++a) {
    const auto& ag = plan.agents[a];
    double c[3];
    const int n = ExtrapOp::coeffs(ag.count, c);
    for (int j = 0; j < n; ++j) {
      const int idx = ag.offset + ag.count - 1 - j;
      out[2 * a] += c[j] * p[2 * idx];
      out[2 * a + 1] += c[j] * p[2 * idx + 1];
    }
  }
  const int id = push_node(std::move(out), true);
  auto op = std::make_unique<ExtrapOp>();
  op->plan = std::move(plan);
  op->in = pos_node;
  op->out = id;
  ops_.push_back(std::move(op));
  return id;
}

int Tape::masked_sq_err(int pred, std::span<const double> target,
                        std::span<const double> mask) {
  const auto& p = nodes_[pred].val;
  if (p.size() != target.size() || p.size() != mask.size())
    throw std::invalid_argument("masked_sq_err: size mismatch");
  double acc = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    const double d = p[i] - target[i];
    acc += mask[i] * d * d;
  }
  const int id = push_node({acc}, true);
  auto op = std::make_unique<MaskedSqErrOp>();
  op->pred = pred;
  op->out = id;
  op->target.assign(target.begin(), target.end());
  op->mask.assign(mask.begin(), mask.end());
  ops_.push_back(std::move(op));
  return id;
}

int Tape::sum(const std::vector<int>& scalars) {
  double acc = 0.0;
  for (int n : scalars) {
    if (node_size(n) != 1) throw std::invalid_argument("sum: non-scalar node");
    acc += nodes_[n].val[0];
  }
  const int id = push_node({acc}, true);
  auto op = std::make_unique<SumOp>();
  op->terms = scalars;
  op->out = id;
  ops_.push_back(std::move(op));
  return id;
}

int Tape::dot_const(int a, std::span<const double> w) {
  const auto& v = nodes_[a].val;
  if (v.size() != w.size())
    throw std::invalid_argument("dot_const: size mismatch");
  double acc = 0.0;
  for (size_t i = 0; i < v.size(); ++i) acc += v[i] * w[i];
  const int id = push_node({acc}, true);
  auto op = std::make_unique<DotConstOp>();
  op->a = a;
  op->out = id;
  op->w.assign(w.begin(), w.end());
  ops_.push_back(std::move(op));
  return id;
}

void Tape::ensure_grads() {
  for (auto& n : nodes_) n.grad.assign(n.val.size(), 0.0);
  if (reg_)
    for (size_t i = 0; i < reg_->entries.size(); ++i)
      if (param_grads_[i].empty())
        param_grads_[i].assign(reg_->entries[i].value.size(), 0.0);
}

void Tape::backward(int loss_node) {
  if (node_size(loss_node) != 1)
    throw std::invalid_argument("backward: loss must be scalar");
  if (loss_node >= static_cast<int>(nodes_.size()))
    throw std::invalid_argument("backward: loss not on tape");
  ensure_grads();
  nodes_[loss_node].grad[0] = 1.0;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)->backward(*this);
  finalize_param_grads();
}

void Tape::finalize_param_grads() {
  for (auto& [pid, st] : stage_ring_) {
    st.shape->ring_grad(st.buf, param_grads_[pid]);
    std::fill(st.buf.begin(), st.buf.end(), 0.0);
  }
  for (auto& [pid, st] : stage_bull_) {
    st.shape->bullseye_grad(st.buf, param_grads_[pid]);
    std::fill(st.buf.begin(), st.buf.end(), 0.0);
  }
  for (auto& [pid, st] : stage_lin_) {
    st.shape->project_grad(st.buf, param_grads_[pid]);
    std::fill(st.buf.begin(), st.buf.end(), 0.0);
  }
}

Adam::Adam(AdamConfig cfg, const ParamRegistry& reg) : cfg_(cfg) {
  m_.resize(reg.entries.size());
  v_.resize(reg.entries.size());
  for (size_t i = 0; i < reg.entries.size(); ++i) {
    m_[i].assign(reg.entries[i].value.size(), 0.0);
    v_[i].assign(reg.entries[i].value.size(), 0.0);
  }
}

double Adam::lr() const {
  const long k = step_ / cfg_.decay_interval;
  return cfg_.base_lr * std::pow(cfg_.gamma, static_cast<double>(k));
}

void Adam::step(ParamRegistry& reg,
                const std::vector<std::vector<double>>& grads) {
  if (grads.size() != reg.entries.size())
    throw std::invalid_argument("Adam::step: missing gradient");
  ++step_;
  const double a = lr();
  const double b1c = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  const double b2c = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  for (size_t p = 0; p < reg.entries.size(); ++p) {
    auto& val = reg.entries[p].value;
    if (grads[p].size() != val.size())
      throw std::invalid_argument("Adam::step: missing gradient");
    for (size_t i = 0; i < val.size(); ++i) {
      const double g = grads[p][i];
      m_[p][i] = cfg_.beta1 * m_[p][i] + (1.0 - cfg_.beta1) * g;
      v_[p][i] = cfg_.beta2 * v_[p][i] + (1.0 - cfg_.beta2) * g * g;
      const double mh = m_[p][i] / b1c;
      const double vh = v_[p][i] / b2c;
      val[i] -= a * mh / (std::sqrt(vh) + cfg_.eps);
    }
  }
}

void Adam::restore(std::vector<std::vector<double>> m,
                   std::vector<std::vector<double>> v, long step) {
  m_ = std::move(m);
  v_ = std::move(v);
  step_ = step;
}

}  // namespace ecco
