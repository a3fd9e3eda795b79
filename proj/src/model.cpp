#include "model.hpp"

#include <cmath>
#include <algorithm>
#include <sstream>
#include <stdexcept>

#include "parallel.hpp"

namespace ecco {

void ModelConfig::validate() const {
  if (t_in < 2 || t_out < 1 || !(dt > 0) || !(R > 0))
    throw std::invalid_argument("model: bad dimensions");
  if (k_theta < 1 || k_r < 1 || k_reg < 1)
    throw std::invalid_argument("model: bad kernel resolution");
  if (k_reg % k_theta != 0)
    throw std::invalid_argument("model: k_reg must be a multiple of k_theta");
  if (encode_channels.empty() || predict_channels.empty())
    throw std::invalid_argument("model: channel lists must be non-empty");
  for (int c : encode_channels)
    if (c < 1) throw std::invalid_argument("model: bad channel count");
  for (int c : predict_channels)
    if (c < 1) throw std::invalid_argument("model: bad channel count");
  if (iterations < 1 || batch_size < 1 || val_interval < 1)
    throw std::invalid_argument("model: bad training schedule");
  if (teacher_forcing_frac < 0 || teacher_forcing_frac > 1)
    throw std::invalid_argument("model: bad teacher forcing fraction");
}

EccoModel::EccoModel(const ModelConfig& cfg)
    : cfg_(cfg), rng_(cfg.seed) {
  cfg_.validate();
  build_layers();
  init_params();
  adam_ = Adam(AdamConfig{cfg_.base_lr, cfg_.lr_gamma, cfg_.lr_decay_interval,
                          0.9, 0.999, 1e-8},
               reg_);
}

void EccoModel::build_layers() {
  input_spec_ = RepSpec::rho1(cfg_.t_in);
  const PolarGridSpec grid =
      PolarGridSpec::make(cfg_.k_theta, cfg_.k_r, cfg_.R);
  const KernelMode kmode =
      cfg_.equivariant ? KernelMode::Equivariant : KernelMode::Free;
  const LinMode lmode =
      cfg_.equivariant ? LinMode::Equivariant : LinMode::Free;

  // channel chains: encode convs are [c1, ..., cn, cn], predict convs are
  // the configured list, then the rho_reg -> rho_1 head
  std::vector<int> enc = cfg_.encode_channels;
  enc.push_back(enc.back());
  std::vector<int> pred = cfg_.predict_channels;

  RepSpec prev = input_spec_;
  auto add_block = [&](int out_channels, bool map_queries,
                       bool agents_only_sources, const std::string& name) {
    ConvBlockDef b;
    b.in = prev;
    b.out = RepSpec::rhoreg(out_channels, cfg_.k_reg);
    b.kernel = ConvKernelShape(grid, b.in, b.out, kmode);
    b.post = PointwiseLinear(b.out, b.out, lmode);
    b.quad = entry_quadrature(b.in);
    b.post_quad = entry_quadrature(b.out);
    b.map_queries = map_queries;
    b.agents_only_sources = agents_only_sources;
    b.ring_p = reg_.add(name + ".ring",
                        static_cast<size_t>(b.kernel.ring_param_count()));
    b.bull_p = reg_.add(name + ".bullseye",
                        static_cast<size_t>(b.kernel.bullseye_param_count()));
    b.post_p =
        reg_.add(name + ".post", static_cast<size_t>(b.post.param_count()));
    b.bias_p = reg_.add(name + ".bias", static_cast<size_t>(out_channels));
    prev = b.out;
    blocks_.push_back(std::move(b));
  };

  for (size_t i = 0; i < enc.size(); ++i) {
    const bool last = (i + 1 == enc.size());
    add_block(enc[i], /*map_queries=*/!last, /*agents_only_sources=*/false,
              "enc" + std::to_string(i + 1));
  }
  for (size_t i = 0; i < pred.size(); ++i)
    add_block(pred[i], /*map_queries=*/false, /*agents_only_sources=*/true,
              "pred" + std::to_string(i + 1));

  head_ = PointwiseLinear(prev, RepSpec::rho1(1), lmode);
  head_quad_ = entry_quadrature(prev);
  head_p = reg_.add("head", static_cast<size_t>(head_.param_count()));
}

void EccoModel::init_params() {
  const double window_mass = std::max(1.0, cfg_.init_expected_neighbors / 3.0);
  auto fill_uniform = [&](int pid, double a) {
    for (double& v : reg_.entries[pid].value) v = rng_.uniform(-a, a);
  };
  for (const auto& b : blocks_) {
    const double a_conv = std::sqrt(3.0 / (b.in.dim() * window_mass));
    fill_uniform(b.ring_p, a_conv);
    fill_uniform(b.bull_p, a_conv);
    const double a_post = std::sqrt(3.0 / b.out.dim());
    fill_uniform(b.post_p, a_post);
    // biases start at zero
  }
  fill_uniform(head_p, std::sqrt(3.0 / blocks_.back().out.dim()));
}

EccoModel::Snapshot EccoModel::snapshot() const {
  Snapshot s;
  s.mk.resize(blocks_.size());
  s.E.resize(blocks_.size());
  for (size_t i = 0; i < blocks_.size(); ++i) {
    const auto& b = blocks_[i];
    b.kernel.materialize(reg_.entries[b.ring_p].value,
                         reg_.entries[b.bull_p].value, s.mk[i]);
    s.E[i].resize(static_cast<size_t>(b.out.dim()) * b.out.dim());
    b.post.materialize(reg_.entries[b.post_p].value, s.E[i]);
  }
  s.head_E.resize(static_cast<size_t>(2) * blocks_.back().out.dim());
  head_.materialize(reg_.entries[head_p].value, s.head_E);
  return s;
}

namespace {

// consecutive valid frames ending at `now`, capped at 3 (what the
// kinematic extrapolation consumes)
int valid_tail(const std::vector<uint8_t>& valid, int now) {
  int n = 0;
  for (int t = now; t >= 0 && valid[t] && n < 3; --t) ++n;
  return n;
}

Vec2 extrapolate_tail(const std::vector<Vec2>& pos, int now, int count) {
  const Vec2 p0 = pos[now];
  if (count >= 3) {
    const Vec2 p1 = pos[now - 1], p2 = pos[now - 2];
    return 2.5 * p0 - 2.0 * p1 + 0.5 * p2;
  }
  if (count == 2) {
    const Vec2 p1 = pos[now - 1];
    return 2.0 * p0 - p1;
  }
  return p0;
}

}  // namespace

EccoModel::StepPlan EccoModel::plan_step(
    const std::vector<std::vector<Vec2>>& traj,
    const std::vector<std::vector<uint8_t>>& valid,
    const std::vector<int>& active, const MapField& map, int now) const {
  StepPlan sp;
  sp.n_active = static_cast<int>(active.size());
  const int n_map = cfg_.use_map ? map.size() : 0;

  PointSet agents, all;
  for (int a : active) agents.pts.push_back(traj[a][now]);
  all = agents;
  for (int m = 0; m < n_map; ++m) all.pts.push_back(map.pos[m]);

  // stacked velocities, newest first; map nodes carry their direction in the
  // first rho_1 slot
  const int d = input_spec_.dim();
  sp.features.assign(static_cast<size_t>(all.size()) * d, 0.0);
  for (size_t i = 0; i < active.size(); ++i) {
    const int a = active[i];
    double* row = sp.features.data() + i * d;
    for (int s = 0; s < cfg_.t_in; ++s) {
      const int t = now - s;
      if (t >= 1 && valid[a][t] && valid[a][t - 1]) {
        const Vec2 v = (traj[a][t] - traj[a][t - 1]) / cfg_.dt;
        row[2 * s] = v.x;
        row[2 * s + 1] = v.y;
      }
    }
  }
  for (int m = 0; m < n_map; ++m) {
    double* row = sp.features.data() + (active.size() + m) * d;
    row[0] = map.dir[m].x;
    row[1] = map.dir[m].y;
  }

  const PolarGridSpec grid = blocks_.front().kernel.grid();
  const AttentionWindow win{grid.R, AttentionWindow::Kind::Smooth};
  sp.all_to_all = std::make_shared<ConvPlan>(
      build_conv_plan(grid, win, all, all, InterpMode::Bilinear));
  sp.all_to_agents = std::make_shared<ConvPlan>(
      build_conv_plan(grid, win, agents, all, InterpMode::Bilinear));
  sp.agents_to_agents = std::make_shared<ConvPlan>(
      build_conv_plan(grid, win, agents, agents, InterpMode::Bilinear));

  sp.x_tilde.resize(active.size());
  for (size_t i = 0; i < active.size(); ++i) {
    const int a = active[i];
    sp.x_tilde[i] =
        extrapolate_tail(traj[a], now, valid_tail(valid[a], now));
  }
  return sp;
}

int EccoModel::record_step(Tape& tape, const Snapshot& snap,
                           const StepPlan& sp) const {
  int node = tape.leaf(sp.features, false);
  for (size_t i = 0; i < blocks_.size(); ++i) {
    const auto& b = blocks_[i];
    ConvLayerRef cref;
    cref.shape = &b.kernel;
    cref.mk = &snap.mk[i];
    cref.plan = b.agents_only_sources ? sp.agents_to_agents
                : b.map_queries      ? sp.all_to_all
                                     : sp.all_to_agents;
    cref.in_quad = &b.quad;
    cref.ring_param = b.ring_p;
    cref.bull_param = b.bull_p;
    node = tape.conv(cref, node);

    LinLayerRef lref;
    lref.shape = &b.post;
    lref.E = &snap.E[i];
    lref.in_quad = &b.post_quad;
    lref.param = b.post_p;
    node = tape.pointwise(lref, node);

    BiasLayerRef bref;
    bref.k_reg = cfg_.k_reg;
    bref.channels = b.out.blocks[0].copies;
    bref.b = reg_.entries[b.bias_p].value.data();
    bref.param = b.bias_p;
    node = tape.bias_reg(bref, node);
    node = tape.leaky_relu(node);
  }
  LinLayerRef href;
  href.shape = &head_;
  href.E = &snap.head_E;
  href.in_quad = &head_quad_;
  href.param = head_p;
  node = tape.pointwise(href, node);

  std::vector<double> xt(sp.x_tilde.size() * 2);
  for (size_t i = 0; i < sp.x_tilde.size(); ++i) {
    xt[2 * i] = sp.x_tilde[i].x;
    xt[2 * i + 1] = sp.x_tilde[i].y;
  }
  return tape.add_const(node, xt);
}

namespace {

struct RolloutState {
  std::vector<std::vector<Vec2>> traj;
  std::vector<std::vector<uint8_t>> valid;
  std::vector<int> active;  // agents valid at the last history frame
};

RolloutState init_state(const Scene& scene, int t_in) {
  RolloutState st;
  for (size_t a = 0; a < scene.agents.size(); ++a) {
    const auto& tr = scene.agents[a];
    if (static_cast<int>(tr.pos.size()) < t_in)
      throw std::invalid_argument("scene track shorter than t_in");
    st.traj.emplace_back(tr.pos.begin(), tr.pos.begin() + t_in);
    st.valid.emplace_back(tr.valid.begin(), tr.valid.begin() + t_in);
    if (tr.valid[t_in - 1]) st.active.push_back(static_cast<int>(a));
  }
  return st;
}

}  // namespace

Prediction EccoModel::rollout(const Scene& scene) const {
  const Snapshot snap = snapshot();
  RolloutState st = init_state(scene, cfg_.t_in);
  const int n = static_cast<int>(scene.agents.size());
  Prediction pred(static_cast<size_t>(n));

  for (int k = 0; k < cfg_.t_out; ++k) {
    const int now = cfg_.t_in - 1 + k;
    const StepPlan sp = plan_step(st.traj, st.valid, st.active,
                                  scene.map, now);
    Tape tape(&reg_);
    const int xhat = record_step(tape, snap, sp);
    const auto x = tape.value(xhat);
    for (size_t i = 0; i < st.active.size(); ++i) {
      const int a = st.active[i];
      const Vec2 p{x[2 * i], x[2 * i + 1]};
      st.traj[a].push_back(p);
      st.valid[a].push_back(1);
      pred[a].push_back(p);
    }
    // inactive agents hold their last position (masked out of metrics)
    for (int a = 0; a < n; ++a) {
      if (std::find(st.active.begin(), st.active.end(), a) !=
          st.active.end())
        continue;
      const Vec2 hold = st.traj[a].back();
      st.traj[a].push_back(hold);
      st.valid[a].push_back(0);
      pred[a].push_back(hold);
    }
  }
  return pred;
}

double EccoModel::train_scene(const Scene& scene, const Snapshot& snap,
                              bool teacher_forced, Tape& tape) const {
  RolloutState st = init_state(scene, cfg_.t_in);
  if (st.active.empty()) return 0.0;
  std::vector<int> err_nodes;
  long n_valid = 0;
  for (int k = 0; k < cfg_.t_out; ++k) {
    const int now = cfg_.t_in - 1 + k;
    const StepPlan sp = plan_step(st.traj, st.valid, st.active,
                                  scene.map, now);
    const int xhat = record_step(tape, snap, sp);

    std::vector<double> truth(st.active.size() * 2, 0.0);
    std::vector<double> mask(st.active.size() * 2, 0.0);
    const int t = cfg_.t_in + k;
    for (size_t i = 0; i < st.active.size(); ++i) {
      const auto& tr = scene.agents[st.active[i]];
      if (t < static_cast<int>(tr.pos.size()) && tr.valid[t]) {
        truth[2 * i] = tr.pos[t].x;
        truth[2 * i + 1] = tr.pos[t].y;
        mask[2 * i] = 1.0;
        mask[2 * i + 1] = 1.0;
        ++n_valid;
      }
    }
    err_nodes.push_back(tape.masked_sq_err(xhat, truth, mask));

    // extend trajectories: ground truth under teacher forcing, otherwise the
    // (detached) predictions
    const auto x = tape.value(xhat);
    for (size_t i = 0; i < st.active.size(); ++i) {
      const int a = st.active[i];
      Vec2 next{x[2 * i], x[2 * i + 1]};
      if (teacher_forced && mask[2 * i] > 0) next = scene.agents[a].pos[t];
      st.traj[a].push_back(next);
      st.valid[a].push_back(1);
    }
    for (size_t a = 0; a < st.traj.size(); ++a) {
      if (std::find(st.active.begin(), st.active.end(),
                    static_cast<int>(a)) != st.active.end())
        continue;
      st.traj[a].push_back(st.traj[a].back());
      st.valid[a].push_back(0);
    }
  }
  if (n_valid == 0) return 0.0;
  const int total = tape.sum(err_nodes);
  const int loss = tape.scale(total, 1.0 / (2.0 * n_valid));
  tape.backward(loss);
  return tape.value(loss)[0];
}

std::vector<TrainLogRow> EccoModel::train(
    const SceneDataset& data,
    const std::function<void(const TrainLogRow&)>& on_row) {
  const std::vector<int> train_idx = data.split_indices("train");
  if (train_idx.empty()) throw std::invalid_argument("train: empty dataset");
  const std::vector<int> val_idx = data.split_indices("val");

  std::vector<TrainLogRow> log;
  const int tf_until =
      static_cast<int>(cfg_.teacher_forcing_frac * cfg_.iterations);

  for (int iter = 0; iter < cfg_.iterations; ++iter) {
    const Snapshot snap = snapshot();
    const bool teacher = iter < tf_until;

    std::vector<int> batch(static_cast<size_t>(cfg_.batch_size));
    for (int& b : batch)
      b = train_idx[rng_.uniform_int(static_cast<int>(train_idx.size()))];

    std::vector<double> losses(batch.size(), 0.0);
    std::vector<std::unique_ptr<Tape>> tapes(batch.size());
    parallel_for(static_cast<int>(batch.size()), [&](int i) {
      tapes[i] = std::make_unique<Tape>(&reg_);
      losses[i] = train_scene(data.scenes[batch[i]], snap, teacher,
                              *tapes[i]);
    });

    // ordered reduction over the batch
    std::vector<std::vector<double>> grads(reg_.entries.size());
    for (size_t p = 0; p < reg_.entries.size(); ++p)
      grads[p].assign(reg_.entries[p].value.size(), 0.0);
    double loss_sum = 0.0;
    for (size_t i = 0; i < batch.size(); ++i) {
      loss_sum += losses[i];
      const auto& pg = tapes[i]->param_grads();
      for (size_t p = 0; p < grads.size(); ++p)
        if (!pg[p].empty())
          for (size_t j = 0; j < grads[p].size(); ++j)
            grads[p][j] += pg[p][j];
    }
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    for (auto& g : grads)
      for (double& x : g) x *= inv_b;
    adam_.step(reg_, grads);

    if ((iter + 1) % cfg_.val_interval == 0 || iter + 1 == cfg_.iterations) {
      TrainLogRow row;
      row.iter = iter + 1;
      row.lr = adam_.lr();
      row.train_loss = loss_sum * inv_b;
      if (!val_idx.empty()) {
        SceneDataset val_subset;
        val_subset.t_in = data.t_in;
        val_subset.t_out = data.t_out;
        const int nval = std::min<int>(cfg_.val_max_scenes,
                                       static_cast<int>(val_idx.size()));
        for (int i = 0; i < nval; ++i)
          val_subset.scenes.push_back(data.scenes[val_idx[i]]);
        const MetricReport rep =
            evaluate(val_subset, "val", {cfg_.t_out});
        row.val_ade = rep.ade;
        row.val_fde = rep.fde;
      }
      log.push_back(row);
      if (on_row) on_row(row);
    }
  }
  return log;
}

MetricReport EccoModel::evaluate(const SceneDataset& data,
                                 const std::string& split,
                                 const std::vector<int>& horizons,
                                 double rotate_by) const {
  const std::vector<int> idx = data.split_indices(split);
  std::vector<MetricReport> parts(idx.size());
  parallel_for(static_cast<int>(idx.size()), [&](int i) {
    Scene scene = data.scenes[idx[i]];
    if (rotate_by != 0.0) scene = rotate_scene(scene, rotate_by);
    const Prediction pred = rollout(scene);
    std::vector<Vec2> truth;
    std::vector<uint8_t> mask;
    future_arrays(scene, cfg_.t_in, cfg_.t_out, truth, mask);
    parts[i] = compute_metrics(flatten_prediction(pred), truth, mask,
                               static_cast<int>(scene.agents.size()),
                               cfg_.t_out, horizons);
  });
  return merge_metrics(parts);
}

FeatureField EccoModel::encode_field(const Scene& scene) const {
  const Snapshot snap = snapshot();
  RolloutState st = init_state(scene, cfg_.t_in);
  const StepPlan sp =
      plan_step(st.traj, st.valid, st.active, scene.map, cfg_.t_in - 1);
  Tape tape(&reg_);
  int node = tape.leaf(sp.features, false);
  const size_t n_encode = cfg_.encode_channels.size() + 1;
  for (size_t i = 0; i < n_encode; ++i) {
    const auto& b = blocks_[i];
    ConvLayerRef cref;
    cref.shape = &b.kernel;
    cref.mk = &snap.mk[i];
    cref.plan = b.map_queries ? sp.all_to_all : sp.all_to_agents;
    cref.in_quad = &b.quad;
    node = tape.conv(cref, node);
    LinLayerRef lref;
    lref.shape = &b.post;
    lref.E = &snap.E[i];
    lref.in_quad = &b.post_quad;
    node = tape.pointwise(lref, node);
    BiasLayerRef bref;
    bref.k_reg = cfg_.k_reg;
    bref.channels = b.out.blocks[0].copies;
    bref.b = reg_.entries[b.bias_p].value.data();
    node = tape.bias_reg(bref, node);
    node = tape.leaky_relu(node);
  }
  FeatureField out;
  out.spec = blocks_[n_encode - 1].out;
  const auto v = tape.value(node);
  // the last encode layer queries agents only
  out.values.assign(v.begin(),
                    v.begin() + static_cast<long>(st.active.size()) *
                                    out.spec.dim());
  for (int a : st.active) out.points.pts.push_back(st.traj[a][cfg_.t_in - 1]);
  return out;
}

std::vector<Vec2> EccoModel::predict_delta(const Scene& scene) const {
  const Snapshot snap = snapshot();
  RolloutState st = init_state(scene, cfg_.t_in);
  const StepPlan sp =
      plan_step(st.traj, st.valid, st.active, scene.map, cfg_.t_in - 1);
  Tape tape(&reg_);
  const int xhat = record_step(tape, snap, sp);
  const auto x = tape.value(xhat);
  std::vector<Vec2> delta(st.active.size());
  for (size_t i = 0; i < st.active.size(); ++i)
    delta[i] = Vec2{x[2 * i] - sp.x_tilde[i].x, x[2 * i + 1] - sp.x_tilde[i].y};
  return delta;
}

namespace {

std::string join_ints(const std::vector<int>& v) {
  std::ostringstream os;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) os << ",";
    os << v[i];
  }
  return os.str();
}

std::vector<int> parse_ints(const std::string& s) {
  std::vector<int> out;
  std::istringstream is(s);
  std::string tok;
  while (std::getline(is, tok, ','))
    if (!tok.empty()) out.push_back(std::stoi(tok));
  return out;
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

std::vector<std::pair<std::string, std::string>> model_config_kv(
    const ModelConfig& cfg) {
  return {
      {"model.t_in", std::to_string(cfg.t_in)},
      {"model.t_out", std::to_string(cfg.t_out)},
      {"model.dt", fmt_double(cfg.dt)},
      {"model.k_theta", std::to_string(cfg.k_theta)},
      {"model.k_r", std::to_string(cfg.k_r)},
      {"model.k_reg", std::to_string(cfg.k_reg)},
      {"model.radius", fmt_double(cfg.R)},
      {"model.encode_channels", join_ints(cfg.encode_channels)},
      {"model.predict_channels", join_ints(cfg.predict_channels)},
      {"model.use_map", cfg.use_map ? "true" : "false"},
      {"model.equivariant", cfg.equivariant ? "true" : "false"},
      {"model.seed", std::to_string(cfg.seed)},
      {"model.init_expected_neighbors",
       fmt_double(cfg.init_expected_neighbors)},
      {"train.iterations", std::to_string(cfg.iterations)},
      {"train.batch_size", std::to_string(cfg.batch_size)},
      {"train.base_lr", fmt_double(cfg.base_lr)},
      {"train.lr_gamma", fmt_double(cfg.lr_gamma)},
      {"train.lr_decay_interval", std::to_string(cfg.lr_decay_interval)},
      {"train.teacher_forcing_frac", fmt_double(cfg.teacher_forcing_frac)},
      {"train.val_interval", std::to_string(cfg.val_interval)},
      {"train.val_max_scenes", std::to_string(cfg.val_max_scenes)},
  };
}

ModelConfig model_config_from_kv(
    const std::function<const std::string*(const std::string&)>& lookup) {
  ModelConfig cfg;
  auto geti = [&](const char* k, int& dst) {
    if (const std::string* v = lookup(k)) dst = std::stoi(*v);
  };
  auto getd = [&](const char* k, double& dst) {
    if (const std::string* v = lookup(k)) dst = std::stod(*v);
  };
  auto getb = [&](const char* k, bool& dst) {
    if (const std::string* v = lookup(k)) dst = (*v == "true" || *v == "1");
  };
  geti("model.t_in", cfg.t_in);
  geti("model.t_out", cfg.t_out);
  getd("model.dt", cfg.dt);
  geti("model.k_theta", cfg.k_theta);
  geti("model.k_r", cfg.k_r);
  geti("model.k_reg", cfg.k_reg);
  getd("model.radius", cfg.R);
  if (const std::string* v = lookup("model.encode_channels"))
    cfg.encode_channels = parse_ints(*v);
  if (const std::string* v = lookup("model.predict_channels"))
    cfg.predict_channels = parse_ints(*v);
  getb("model.use_map", cfg.use_map);
  getb("model.equivariant", cfg.equivariant);
  if (const std::string* v = lookup("model.seed"))
    cfg.seed = std::stoull(*v);
  getd("model.init_expected_neighbors", cfg.init_expected_neighbors);
  geti("train.iterations", cfg.iterations);
  geti("train.batch_size", cfg.batch_size);
  getd("train.base_lr", cfg.base_lr);
  getd("train.lr_gamma", cfg.lr_gamma);
  geti("train.lr_decay_interval", cfg.lr_decay_interval);
  getd("train.teacher_forcing_frac", cfg.teacher_forcing_frac);
  geti("train.val_interval", cfg.val_interval);
  geti("train.val_max_scenes", cfg.val_max_scenes);
  return cfg;
}

}  // namespace ecco
