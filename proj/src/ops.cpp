#include "ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ecco {

ConvPlan build_conv_plan(const PolarGridSpec& grid, const AttentionWindow& win,
                         const PointSet& queries, const PointSet& sources,
                         InterpMode mode) {
  const NeighborList nb = radius_neighbors(sources, queries, grid.R);
  ConvPlan plan;
  plan.n_query = queries.size();
  plan.n_src = sources.size();
  plan.offsets.assign(static_cast<size_t>(plan.n_query) + 1, 0);
  plan.pairs.reserve(nb.entries.size());

  struct Keyed {
    double r;
    Vec2 dx;
    ConvPlan::Pair p;
  };
  std::vector<Keyed> keyed;
  for (int q = 0; q < plan.n_query; ++q) {
    keyed.clear();
    for (const NeighborEntry& e : nb.of(q)) {
      ConvPlan::Pair p;
      p.src = e.src;
      p.a = win(e.r);
      p.fp = kernel_footprint(grid, e.dx, mode);
      keyed.push_back({e.r, e.dx, p});
    }
    std::sort(keyed.begin(), keyed.end(), [](const Keyed& a, const Keyed& b) {
      if (a.r != b.r) return a.r < b.r;
      if (a.dx.x != b.dx.x) return a.dx.x < b.dx.x;
      return a.dx.y < b.dx.y;
    });
    for (const Keyed& k : keyed) plan.pairs.push_back(k.p);
    plan.offsets[q + 1] = static_cast<int>(plan.pairs.size());
  }
  return plan;
}

void conv_forward(const MaterializedKernel& mk, const ConvPlan& plan,
                  std::span<const double> in_quad,
                  std::span<const double> src_values, std::span<double> out) {
  const int od = mk.od, id = mk.id;
  std::fill(out.begin(), out.end(), 0.0);
  std::vector<double> qf(static_cast<size_t>(id));
  for (int q = 0; q < plan.n_query; ++q) {
    double* g = out.data() + static_cast<size_t>(q) * od;
    for (const ConvPlan::Pair& p : plan.of(q)) {
      const double* f = src_values.data() + static_cast<size_t>(p.src) * id;
      for (int j = 0; j < id; ++j) qf[j] = in_quad[j] * f[j];
      if (p.fp.bullseye) {
        const double* E = mk.bull.data();
        for (int r = 0; r < od; ++r) {
          double acc = 0.0;
          const double* row = E + static_cast<size_t>(r) * id;
          for (int j = 0; j < id; ++j) acc += row[j] * qf[j];
          g[r] += p.a * acc;
        }
        continue;
      }
      for (int n = 0; n < p.fp.n; ++n) {
        const double w = p.a * p.fp.w[n];
        if (w == 0.0) continue;
        const double* G =
            mk.grid.data() + static_cast<size_t>(p.fp.node[n]) * od * id;
        for (int r = 0; r < od; ++r) {
          double acc = 0.0;
          const double* row = G + static_cast<size_t>(r) * id;
          for (int j = 0; j < id; ++j) acc += row[j] * qf[j];
          g[r] += w * acc;
        }
      }
    }
  }
}

void conv_backward(const MaterializedKernel& mk, const ConvPlan& plan,
                   std::span<const double> in_quad,
                   std::span<const double> src_values,
                   std::span<const double> out_bar, std::span<double> src_bar,
                   std::span<double> grid_bar, std::span<double> bull_bar) {
  const int od = mk.od, id = mk.id;
  const bool want_src = !src_bar.empty();
  const bool want_grid = !grid_bar.empty();
  const bool want_bull = !bull_bar.empty();
  std::vector<double> qf(static_cast<size_t>(id));
  std::vector<double> qfb(static_cast<size_t>(id));
  for (int q = 0; q < plan.n_query; ++q) {
    const double* gb = out_bar.data() + static_cast<size_t>(q) * od;
    for (const ConvPlan::Pair& p : plan.of(q)) {
      const double* f = src_values.data() + static_cast<size_t>(p.src) * id;
      for (int j = 0; j < id; ++j) qf[j] = in_quad[j] * f[j];
      std::fill(qfb.begin(), qfb.end(), 0.0);
      if (p.fp.bullseye) {
        if (want_bull) {
          for (int r = 0; r < od; ++r) {
            const double coef = p.a * gb[r];
            if (coef == 0.0) continue;
            double* row = bull_bar.data() + static_cast<size_t>(r) * id;
            for (int j = 0; j < id; ++j) row[j] += coef * qf[j];
          }
        }
        if (want_src) {
          const double* E = mk.bull.data();
          for (int r = 0; r < od; ++r) {
            const double coef = p.a * gb[r];
            if (coef == 0.0) continue;
            const double* row = E + static_cast<size_t>(r) * id;
            for (int j = 0; j < id; ++j) qfb[j] += coef * row[j];
          }
        }
      } else {
        for (int n = 0; n < p.fp.n; ++n) {
          const double w = p.a * p.fp.w[n];
          if (w == 0.0) continue;
          const size_t base = static_cast<size_t>(p.fp.node[n]) * od * id;
          if (want_grid) {
            double* Gb = grid_bar.data() + base;
            for (int r = 0; r < od; ++r) {
              const double coef = w * gb[r];
              if (coef == 0.0) continue;
              double* row = Gb + static_cast<size_t>(r) * id;
              for (int j = 0; j < id; ++j) row[j] += coef * qf[j];
            }
          }
          if (want_src) {
            const double* G = mk.grid.data() + base;
            for (int r = 0; r < od; ++r) {
              const double coef = w * gb[r];
              if (coef == 0.0) continue;
              const double* row = G + static_cast<size_t>(r) * id;
              for (int j = 0; j < id; ++j) qfb[j] += coef * row[j];
            }
          }
        }
      }
      if (want_src) {
        double* fb = src_bar.data() + static_cast<size_t>(p.src) * id;
        for (int j = 0; j < id; ++j) fb[j] += in_quad[j] * qfb[j];
      }
    }
  }
}

void pointwise_forward(std::span<const double> E, int od, int id,
                       std::span<const double> in_quad, int n,
                       std::span<const double> in, std::span<double> out) {
  std::vector<double> qf(static_cast<size_t>(id));
  for (int i = 0; i < n; ++i) {
    const double* f = in.data() + static_cast<size_t>(i) * id;
    double* g = out.data() + static_cast<size_t>(i) * od;
    for (int j = 0; j < id; ++j) qf[j] = in_quad[j] * f[j];
    for (int r = 0; r < od; ++r) {
      double acc = 0.0;
      const double* row = E.data() + static_cast<size_t>(r) * id;
      for (int j = 0; j < id; ++j) acc += row[j] * qf[j];
      g[r] = acc;
    }
  }
}

void pointwise_backward(std::span<const double> E, int od, int id,
                        std::span<const double> in_quad, int n,
                        std::span<const double> in,
                        std::span<const double> out_bar,
                        std::span<double> in_bar, std::span<double> E_bar) {
  const bool want_in = !in_bar.empty();
  const bool want_E = !E_bar.empty();
  std::vector<double> qf(static_cast<size_t>(id));
  for (int i = 0; i < n; ++i) {
    const double* f = in.data() + static_cast<size_t>(i) * id;
    const double* gb = out_bar.data() + static_cast<size_t>(i) * od;
    if (want_E) {
      for (int j = 0; j < id; ++j) qf[j] = in_quad[j] * f[j];
      for (int r = 0; r < od; ++r) {
        const double coef = gb[r];
        if (coef == 0.0) continue;
        double* row = E_bar.data() + static_cast<size_t>(r) * id;
        for (int j = 0; j < id; ++j) row[j] += coef * qf[j];
      }
    }
    if (want_in) {
      double* fb = in_bar.data() + static_cast<size_t>(i) * id;
      for (int r = 0; r < od; ++r) {
        const double coef = gb[r];
        if (coef == 0.0) continue;
        const double* row = E.data() + static_cast<size_t>(r) * id;
        for (int j = 0; j < id; ++j) fb[j] += coef * in_quad[j] * row[j];
      }
    }
  }
}

FeatureField cts_conv(const PolarKernel& kernel, const AttentionWindow& win,
                      const FeatureField& sources, const PointSet& queries,
                      InterpMode mode) {
  if (!(sources.spec == kernel.shape.in()))
    throw std::invalid_argument("cts_conv: representation mismatch");
  MaterializedKernel mk;
  kernel.shape.materialize(kernel.ring, kernel.bull, mk);
  const ConvPlan plan =
      build_conv_plan(kernel.shape.grid(), win, queries, sources.points, mode);
  FeatureField out;
  out.points = queries;
  out.spec = kernel.shape.out();
  out.values.assign(static_cast<size_t>(queries.size()) * mk.od, 0.0);
  const std::vector<double> q = entry_quadrature(sources.spec);
  conv_forward(mk, plan, q, sources.values, out.values);
  return out;
}

FeatureField equi_linear(const PointwiseLinear& lin,
                         std::span<const double> params,
                         const FeatureField& f) {
  if (!(f.spec == lin.in()))
    throw std::invalid_argument("equi_linear: spec mismatch");
  const int od = lin.out().dim(), id = lin.in().dim();
  std::vector<double> E(static_cast<size_t>(od) * id);
  lin.materialize(params, E);
  FeatureField out;
  out.points = f.points;
  out.spec = lin.out();
  out.values.assign(static_cast<size_t>(f.size()) * od, 0.0);
  const std::vector<double> q = entry_quadrature(f.spec);
  pointwise_forward(E, od, id, q, f.size(), f.values, out.values);
  return out;
}

FeatureField pointwise_nonlinearity(const FeatureField& f) {
  if (!f.spec.pure_reg())
    throw std::invalid_argument(
        "pointwise_nonlinearity: spec must contain only rho_reg blocks");
  FeatureField out = f;
  for (double& v : out.values) v = leaky(v);
  return out;
}

}  // namespace ecco
