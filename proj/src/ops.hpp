#pragma once

#include <memory>
#include <span>
#include <vector>

#include "field.hpp"
#include "kernel.hpp"

namespace ecco {

// Radial local attention, compactly supported on [0, R] with a(0) = 1.
struct AttentionWindow {
  enum class Kind { Smooth, Boxcar };

  double R = 1.0;
  Kind kind = Kind::Smooth;

  double operator()(double r) const {
    if (r > R) return 0.0;
    if (kind == Kind::Boxcar) return 1.0;
    const double u = r / R;
    const double t = 1.0 - u * u;
    return t * t;
  }
};

// Precomputed geometry of one convolution application: per query, the
// attention-weighted neighbor pairs with their kernel-grid footprints.
// Pairs are ordered by (r, dx.x, dx.y) so accumulation order is independent
// of particle labels.
struct ConvPlan {
  struct Pair {
    int src;
    double a;
    KernelFootprint fp;
  };

  int n_query = 0;
  int n_src = 0;
  std::vector<Pair> pairs;
  std::vector<int> offsets;  // per query, size n_query + 1

  std::span<const Pair> of(int q) const {
    return {pairs.data() + offsets[q],
            static_cast<size_t>(offsets[q + 1] - offsets[q])};
  }
};

ConvPlan build_conv_plan(const PolarGridSpec& grid, const AttentionWindow& win,
                         const PointSet& queries, const PointSet& sources,
                         InterpMode mode = InterpMode::Bilinear);

// g_i = sum_j a(r_ij) K(dx_ij) . f_j with rho_reg entries quadrature-weighted
// (the torus-kernel integral transform). src_q = per-entry quadrature of the
// input spec; values row-major.
void conv_forward(const MaterializedKernel& mk, const ConvPlan& plan,
                  std::span<const double> in_quad,
                  std::span<const double> src_values, std::span<double> out);

// Backward pass. Any of src_bar / grid_bar / bull_bar may be empty spans to
// skip that output. grid_bar uses the materialized layout.
void conv_backward(const MaterializedKernel& mk, const ConvPlan& plan,
                   std::span<const double> in_quad,
                   std::span<const double> src_values,
                   std::span<const double> out_bar, std::span<double> src_bar,
                   std::span<double> grid_bar, std::span<double> bull_bar);

// Per-particle linear map with materialized matrix E (out_dim x in_dim).
void pointwise_forward(std::span<const double> E, int od, int id,
                       std::span<const double> in_quad, int n,
                       std::span<const double> in, std::span<double> out);
void pointwise_backward(std::span<const double> E, int od, int id,
                        std::span<const double> in_quad, int n,
                        std::span<const double> in,
                        std::span<const double> out_bar,
                        std::span<double> in_bar, std::span<double> E_bar);

// Leaky rectifier, slope 0.01 on negatives.
inline double leaky(double x) { return x >= 0.0 ? x : 0.01 * x; }
inline double leaky_grad(double x) { return x >= 0.0 ? 1.0 : 0.01; }

// Field-level wrappers implementing the layer contracts.
FeatureField cts_conv(const PolarKernel& kernel, const AttentionWindow& win,
                      const FeatureField& sources, const PointSet& queries,
                      InterpMode mode = InterpMode::Bilinear);

FeatureField equi_linear(const PointwiseLinear& lin,
                         std::span<const double> params,
                         const FeatureField& f);

// Applies the rectifier to every rho_reg sample; rejects rho_1 blocks
// (pointwise nonlinearities on rho_1 are not equivariant).
FeatureField pointwise_nonlinearity(const FeatureField& f);

}  // namespace ecco
