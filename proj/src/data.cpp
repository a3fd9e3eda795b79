#include "data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "json.hpp"
#include "repr.hpp"
#include "rng.hpp"

namespace ecco {

using json = nlohmann::ordered_json;

std::vector<int> SceneDataset::split_indices(const std::string& split) const {
  std::vector<int> idx;
  for (size_t i = 0; i < scenes.size(); ++i)
    if (scenes[i].split == split) idx.push_back(static_cast<int>(i));
  return idx;
}

void GeneratorConfig::validate() const {
  if (scenes <= 0 || t_in < 2 || t_out < 1 || !(dt > 0))
    throw std::invalid_argument("generator: bad scene dimensions");
  if (agents_min < 1 || agents_max < agents_min)
    throw std::invalid_argument("generator: bad agent counts");
  if (family != "cv" && family != "arc" && family != "intersection" &&
      family != "mixed")
    throw std::invalid_argument("generator: unknown family " + family);
  if (noise_sigma < 0 || speed_min <= 0 || speed_max < speed_min)
    throw std::invalid_argument("generator: bad kinematics");
  if (val_fraction < 0 || test_fraction < 0 ||
      val_fraction + test_fraction > 0.9)
    throw std::invalid_argument("generator: bad split fractions");
}

namespace {

std::string split_of(const GeneratorConfig& cfg, int i) {
  const double u = (i % 1000) / 1000.0;
  if (u < cfg.val_fraction) return "val";
  if (u < cfg.val_fraction + cfg.test_fraction) return "test";
  return "train";
}

void add_noise(Scene& s, double sigma, Rng& rng) {
  if (sigma <= 0) return;
  for (auto& a : s.agents)
    for (auto& p : a.pos) {
      p.x += sigma * rng.gaussian();
      p.y += sigma * rng.gaussian();
    }
}

Scene gen_cv(const GeneratorConfig& cfg, Rng& rng) {
  Scene s;
  s.dt = cfg.dt;
  const int T = cfg.t_in + cfg.t_out;
  const int n = cfg.agents_min + rng.uniform_int(cfg.agents_max -
                                                 cfg.agents_min + 1);
  for (int a = 0; a < n; ++a) {
    AgentTrack tr;
    tr.id = a;
    const Vec2 p0{rng.uniform(-15, 15), rng.uniform(-15, 15)};
    const double heading = rng.uniform(0, kTwoPi);
    const double speed = rng.uniform(cfg.speed_min, cfg.speed_max);
    const Vec2 v{speed * std::cos(heading), speed * std::sin(heading)};
    for (int t = 0; t < T; ++t) {
      tr.pos.push_back(p0 + (t * cfg.dt) * v);
      tr.valid.push_back(1);
    }
    s.agents.push_back(std::move(tr));
  }
  return s;
}

Scene gen_arc(const GeneratorConfig& cfg, Rng& rng) {
  Scene s;
  s.dt = cfg.dt;
  const int T = cfg.t_in + cfg.t_out;
  const int n = cfg.agents_min + rng.uniform_int(cfg.agents_max -
                                                 cfg.agents_min + 1);
  for (int a = 0; a < n; ++a) {
    AgentTrack tr;
    tr.id = a;
    const Vec2 p0{rng.uniform(-15, 15), rng.uniform(-15, 15)};
    const double heading = rng.uniform(0, kTwoPi);
    const double speed = rng.uniform(cfg.speed_min, cfg.speed_max);
    // equal proportion of left and right turns
    const double sign = (a % 2 == 0) ? 1.0 : -1.0;
    const double omega =
        sign * rng.uniform(cfg.turn_rate_min, cfg.turn_rate_max);
    const double radius = speed / std::abs(omega);
    // circle center perpendicular to the initial heading
    const Vec2 center{p0.x - sign * radius * std::sin(heading),
                      p0.y + sign * radius * std::cos(heading)};
    const double phi0 = std::atan2(p0.y - center.y, p0.x - center.x);
    for (int t = 0; t < T; ++t) {
      const double phi = phi0 + omega * t * cfg.dt;
      tr.pos.push_back({center.x + radius * std::cos(phi),
                        center.y + radius * std::sin(phi)});
      tr.valid.push_back(1);
    }
    s.agents.push_back(std::move(tr));
  }
  return s;
}

// A route through the 4-way intersection: straight entry lane, optional
// quarter-circle arc, straight exit. Parameterized by arclength.
struct Route {
  // piecewise segments: 0 entry line, 1 arc (len 0 for straight), 2 exit
  Vec2 entry_start, entry_dir;
  double entry_len = 0;
  Vec2 arc_center;
  double arc_radius = 0, arc_phi0 = 0, arc_sign = 0, arc_len = 0;
  Vec2 exit_start, exit_dir;
  double exit_len = 0;

  double total() const { return entry_len + arc_len + exit_len; }

  Vec2 at(double sarc, Vec2* tangent) const {
    if (sarc <= entry_len) {
      if (tangent) *tangent = entry_dir;
      return entry_start + sarc * entry_dir;
    }
    sarc -= entry_len;
    if (sarc <= arc_len && arc_len > 0) {
      const double phi = arc_phi0 + arc_sign * sarc / arc_radius;
      if (tangent)
        *tangent = Vec2{-arc_sign * std::sin(phi), arc_sign * std::cos(phi)};
      return arc_center + Vec2{arc_radius * std::cos(phi),
                               arc_radius * std::sin(phi)};
    }
    sarc -= arc_len;
    if (sarc > exit_len) sarc = exit_len;
    if (tangent) *tangent = exit_dir;
    return exit_start + sarc * exit_dir;
  }
};

Vec2 rot90(Vec2 v, int times) {
  Vec2 r = v;
  for (int i = 0; i < ((times % 4) + 4) % 4; ++i) r = Vec2{-r.y, r.x};
  return r;
}

// maneuver: 0 straight, 1 left, 2 right; approach 0..3 rotates the western
// template by multiples of 90 degrees.
Route make_route(const GeneratorConfig& cfg, int approach, int maneuver) {
  const double D = cfg.approach_len;
  const double r = cfg.turn_radius;
  const double w = cfg.lane_offset;
  Route t;  // western approach template, heading +x on lane y = -w
  t.entry_start = {-D, -w};
  t.entry_dir = {1, 0};
  if (maneuver == 0) {
    t.entry_len = 2 * D;
    t.exit_start = t.entry_start + t.entry_len * t.entry_dir;
    t.exit_dir = t.entry_dir;
    t.exit_len = 0;
  } else if (maneuver == 1) {  // left: exit northbound on lane x = +w
    t.entry_len = D - r;
    t.arc_center = {-r, r};
    t.arc_radius = r + w;
    t.arc_phi0 = -kPi / 2;  // entry point (-r, -w)
    t.arc_sign = 1.0;
    t.arc_len = (kPi / 2) * t.arc_radius;
    t.exit_start = {w, r};
    t.exit_dir = {0, 1};
    t.exit_len = D - r;
  } else {  // right: exit southbound on lane x = -w
    t.entry_len = D - r;
    t.arc_center = {-r, -r};
    t.arc_radius = r - w;
    t.arc_phi0 = kPi / 2;  // entry point (-r, -w)
    t.arc_sign = -1.0;
    t.arc_len = (kPi / 2) * t.arc_radius;
    t.exit_start = {-w, -r};
    t.exit_dir = {0, -1};
    t.exit_len = D - r;
  }
  // rotate the template into the requested approach
  Route out = t;
  out.entry_start = rot90(t.entry_start, approach);
  out.entry_dir = rot90(t.entry_dir, approach);
  out.arc_center = rot90(t.arc_center, approach);
  out.arc_phi0 = t.arc_phi0 + approach * kPi / 2;
  out.exit_start = rot90(t.exit_start, approach);
  out.exit_dir = rot90(t.exit_dir, approach);
  return out;
}

Scene gen_intersection(const GeneratorConfig& cfg, Rng& rng) {
  Scene s;
  s.dt = cfg.dt;
  const int T = cfg.t_in + cfg.t_out;
  const int n = cfg.agents_min + rng.uniform_int(cfg.agents_max -
                                                 cfg.agents_min + 1);
  std::vector<Route> routes;
  for (int a = 0; a < n; ++a) {
    const int approach = rng.uniform_int(4);
    const int maneuver = rng.uniform_int(3);
    Route route = make_route(cfg, approach, maneuver);
    const double speed = rng.uniform(cfg.speed_min, cfg.speed_max);
    const double travel = speed * cfg.dt * (T - 1);
    const double smax = std::max(0.1, route.total() - travel);
    const double s0 = rng.uniform(0.0, smax);
    AgentTrack tr;
    tr.id = a;
    for (int t = 0; t < T; ++t) {
      tr.pos.push_back(route.at(s0 + speed * cfg.dt * t, nullptr));
      tr.valid.push_back(1);
    }
    s.agents.push_back(std::move(tr));
    routes.push_back(route);
  }
  // lane polylines (with tangents) along every route in use
  for (const Route& route : routes) {
    const int steps = static_cast<int>(route.total() / cfg.map_spacing);
    for (int i = 0; i <= steps; ++i) {
      Vec2 tangent;
      const Vec2 p = route.at(i * cfg.map_spacing, &tangent);
      s.map.pos.push_back(p);
      s.map.dir.push_back(tangent);
    }
  }
  return s;
}

}  // namespace

Scene rotate_scene(const Scene& s, double theta) {
  Scene out = s;
  const Rotation rot = Rotation::from(theta);
  for (auto& a : out.agents)
    for (auto& p : a.pos) p = act_rho1(rot, p);
  for (auto& p : out.map.pos) p = act_rho1(rot, p);
  for (auto& d : out.map.dir) d = act_rho1(rot, d);
  return out;
}

SceneDataset generate_synthetic(const GeneratorConfig& cfg) {
  cfg.validate();
  SceneDataset ds;
  ds.t_in = cfg.t_in;
  ds.t_out = cfg.t_out;
  ds.scenes.reserve(static_cast<size_t>(cfg.scenes));
  ds.rotations.reserve(static_cast<size_t>(cfg.scenes));
  for (int i = 0; i < cfg.scenes; ++i) {
    Rng rng(derive_seed(cfg.seed, static_cast<uint64_t>(i)));
    std::string family = cfg.family;
    if (family == "mixed") {
      const char* fams[3] = {"cv", "arc", "intersection"};
      family = fams[i % 3];
    }
    Scene s;
    if (family == "cv")
      s = gen_cv(cfg, rng);
    else if (family == "arc")
      s = gen_arc(cfg, rng);
    else
      s = gen_intersection(cfg, rng);
    add_noise(s, cfg.noise_sigma, rng);
    double rotation = 0.0;
    if (cfg.augment_rotations) {
      rotation = rng.uniform(0.0, kTwoPi);
      s = rotate_scene(s, rotation);
    }
    s.scene_id = "scene-" + std::to_string(i);
    s.split = split_of(cfg, i);
    ds.scenes.push_back(std::move(s));
    ds.rotations.push_back(rotation);
  }
  return ds;
}

void save_scenes(const SceneDataset& ds, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "ecco-scenes v1\n";
  for (const Scene& s : ds.scenes) {
    json rec;
    rec["scene_id"] = s.scene_id;
    rec["dt"] = s.dt;
    rec["t_in"] = ds.t_in;
    rec["t_out"] = ds.t_out;
    rec["split"] = s.split;
    json agents = json::array();
    for (const auto& a : s.agents) {
      json ja;
      ja["id"] = a.id;
      std::vector<double> flat;
      flat.reserve(a.pos.size() * 2);
      for (const Vec2& p : a.pos) {
        flat.push_back(p.x);
        flat.push_back(p.y);
      }
      ja["pos"] = flat;
      ja["mask"] = std::vector<int>(a.valid.begin(), a.valid.end());
      agents.push_back(std::move(ja));
    }
    rec["agents"] = std::move(agents);
    if (s.map.size() > 0) {
      json jm;
      std::vector<double> mp, md;
      for (const Vec2& p : s.map.pos) {
        mp.push_back(p.x);
        mp.push_back(p.y);
      }
      for (const Vec2& d : s.map.dir) {
        md.push_back(d.x);
        md.push_back(d.y);
      }
      jm["pos"] = mp;
      jm["dir"] = md;
      rec["map"] = std::move(jm);
    }
    os << rec.dump() << "\n";
  }
}

SceneDataset load_scenes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path);
  std::string line;
  if (!std::getline(is, line) || line != "ecco-scenes v1")
    throw std::runtime_error(path + ": not an ecco-scenes v1 file");
  SceneDataset ds;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    json rec = json::parse(line);
    Scene s;
    s.scene_id = rec.at("scene_id").get<std::string>();
    s.dt = rec.at("dt").get<double>();
    s.split = rec.at("split").get<std::string>();
    ds.t_in = rec.at("t_in").get<int>();
    ds.t_out = rec.at("t_out").get<int>();
    for (const auto& ja : rec.at("agents")) {
      AgentTrack a;
      a.id = ja.at("id").get<int>();
      const auto flat = ja.at("pos").get<std::vector<double>>();
      for (size_t i = 0; i + 1 < flat.size(); i += 2)
        a.pos.push_back({flat[i], flat[i + 1]});
      const auto mask = ja.at("mask").get<std::vector<int>>();
      a.valid.assign(mask.begin(), mask.end());
      s.agents.push_back(std::move(a));
    }
    if (rec.contains("map")) {
      const auto mp = rec["map"].at("pos").get<std::vector<double>>();
      const auto md = rec["map"].at("dir").get<std::vector<double>>();
      for (size_t i = 0; i + 1 < mp.size(); i += 2)
        s.map.pos.push_back({mp[i], mp[i + 1]});
      for (size_t i = 0; i + 1 < md.size(); i += 2)
        s.map.dir.push_back({md[i], md[i + 1]});
    }
    ds.scenes.push_back(std::move(s));
    ds.rotations.push_back(0.0);
  }
  return ds;
}

MetricReport compute_metrics(const std::vector<Vec2>& pred,
                             const std::vector<Vec2>& truth,
                             const std::vector<uint8_t>& mask, int n, int t,
                             const std::vector<int>& horizons) {
  if (pred.size() != truth.size() || pred.size() != mask.size() ||
      static_cast<int>(pred.size()) != n * t)
    throw std::invalid_argument("compute_metrics: shape mismatch");
  MetricReport rep;
  std::vector<double> hsum(horizons.size(), 0.0);
  std::vector<long> hcount(horizons.size(), 0);
  double ade_sum = 0.0, fde_sum = 0.0;
  for (int a = 0; a < n; ++a) {
    for (int k = 0; k < t; ++k) {
      const size_t i = static_cast<size_t>(a) * t + k;
      if (!mask[i]) continue;
      const double err = norm(pred[i] - truth[i]);
      ade_sum += err;
      ++rep.count;
      if (k == t - 1) {
        fde_sum += err;
        ++rep.fde_count;
      }
      for (size_t h = 0; h < horizons.size(); ++h)
        if (k + 1 == horizons[h]) {
          hsum[h] += err;
          ++hcount[h];
        }
    }
  }
  rep.ade = rep.count ? ade_sum / rep.count : 0.0;
  rep.fde = rep.fde_count ? fde_sum / rep.fde_count : 0.0;
  for (size_t h = 0; h < horizons.size(); ++h) {
    rep.de_at.push_back(
        {horizons[h], hcount[h] ? hsum[h] / hcount[h] : 0.0});
    rep.de_counts.push_back(hcount[h]);
  }
  return rep;
}

MetricReport merge_metrics(const std::vector<MetricReport>& parts) {
  MetricReport out;
  std::vector<double> hsum;
  std::vector<long> hcount;
  std::vector<int> hsteps;
  double ade_sum = 0.0, fde_sum = 0.0;
  for (const auto& p : parts) {
    ade_sum += p.ade * p.count;
    fde_sum += p.fde * p.fde_count;
    out.count += p.count;
    out.fde_count += p.fde_count;
    for (size_t h = 0; h < p.de_at.size(); ++h) {
      if (h >= hsteps.size()) {
        hsteps.push_back(p.de_at[h].first);
        hsum.push_back(0.0);
        hcount.push_back(0);
      }
      hsum[h] += p.de_at[h].second * p.de_counts[h];
      hcount[h] += p.de_counts[h];
    }
  }
  out.ade = out.count ? ade_sum / out.count : 0.0;
  out.fde = out.fde_count ? fde_sum / out.fde_count : 0.0;
  for (size_t h = 0; h < hsteps.size(); ++h) {
    out.de_at.push_back({hsteps[h], hcount[h] ? hsum[h] / hcount[h] : 0.0});
    out.de_counts.push_back(hcount[h]);
  }
  return out;
}

Prediction baseline_constant_velocity(const Scene& scene, int t_in,
                                      int t_out) {
  Prediction pred;
  for (const auto& a : scene.agents) {
    std::vector<Vec2> traj;
    Vec2 v{0, 0};
    const Vec2 last = a.pos[t_in - 1];
    if (t_in >= 2 && a.valid[t_in - 1] && a.valid[t_in - 2])
      v = (a.pos[t_in - 1] - a.pos[t_in - 2]) / scene.dt;
    for (int k = 1; k <= t_out; ++k)
      traj.push_back(last + (k * scene.dt) * v);
    pred.push_back(std::move(traj));
  }
  return pred;
}

TrajLibrary build_traj_library(const SceneDataset& ds,
                               const std::string& split, int t_in,
                               int t_out) {
  TrajLibrary lib;
  for (const Scene& s : ds.scenes) {
    if (s.split != split) continue;
    for (const auto& a : s.agents) {
      if (static_cast<int>(a.pos.size()) < t_in + t_out) continue;
      bool ok = true;
      for (int t = 0; t < t_in + t_out; ++t)
        if (!a.valid[t]) ok = false;
      if (!ok) continue;
      const Vec2 origin = a.pos[0];
      std::vector<Vec2> h, f;
      for (int t = 0; t < t_in; ++t) h.push_back(a.pos[t] - origin);
      for (int t = t_in; t < t_in + t_out; ++t)
        f.push_back(a.pos[t] - origin);
      lib.history.push_back(std::move(h));
      lib.future.push_back(std::move(f));
    }
  }
  return lib;
}

Prediction baseline_nearest_neighbor(const TrajLibrary& lib,
                                     const Scene& scene, int t_in,
                                     int t_out) {
  if (lib.history.empty())
    throw std::invalid_argument("nearest_neighbor: empty reference set");
  Prediction pred;
  for (const auto& a : scene.agents) {
    const Vec2 origin = a.pos[0];
    std::vector<Vec2> q;
    for (int t = 0; t < t_in; ++t) q.push_back(a.pos[t] - origin);
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (size_t r = 0; r < lib.history.size(); ++r) {
      double d = 0.0;
      for (int t = 0; t < t_in; ++t) d += norm(q[t] - lib.history[r][t]);
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(r);
      }
    }
    std::vector<Vec2> traj;
    for (int k = 0; k < t_out; ++k)
      traj.push_back(lib.future[best][k] + origin);
    pred.push_back(std::move(traj));
  }
  return pred;
}

void future_arrays(const Scene& scene, int t_in, int t_out,
                   std::vector<Vec2>& truth, std::vector<uint8_t>& mask) {
  const int n = static_cast<int>(scene.agents.size());
  truth.assign(static_cast<size_t>(n) * t_out, Vec2{0, 0});
  mask.assign(static_cast<size_t>(n) * t_out, 0);
  for (int a = 0; a < n; ++a) {
    const auto& tr = scene.agents[a];
    for (int k = 0; k < t_out; ++k) {
      const int t = t_in + k;
      if (t < static_cast<int>(tr.pos.size()) && tr.valid[t]) {
        truth[static_cast<size_t>(a) * t_out + k] = tr.pos[t];
        mask[static_cast<size_t>(a) * t_out + k] = 1;
      }
    }
  }
}

std::vector<Vec2> flatten_prediction(const Prediction& pred) {
  std::vector<Vec2> flat;
  for (const auto& traj : pred)
    flat.insert(flat.end(), traj.begin(), traj.end());
  return flat;
}

}  // namespace ecco
