#pragma once

#include <span>
#include <vector>

#include "geometry.hpp"
#include "repr.hpp"

namespace ecco {

// Polar discretization: k_theta slices at angles 2*pi*t/k_theta, k_r rings
// over (R_e, R], and a central bullseye disk of radius R_e.
struct PolarGridSpec {
  int k_theta = 1;
  int k_r = 1;
  double R = 1.0;
  double R_e = 0.25;

  static PolarGridSpec make(int k_theta, int k_r, double R);

  double ring_width() const { return (R - R_e) / k_r; }
  double ring_center(int m) const { return R_e + (m + 0.5) * ring_width(); }
};

enum class LinMode { Equivariant, Free };

// Per-particle linear map rho_in -> rho_out. In Equivariant mode the
// parameters are exactly the stabilizer-constrained ones: one scalar per
// channel pair except rho_reg -> rho_reg, which carries a kernel function
// kappa on the circle (k_reg samples, realized as a circulant matrix).
// Free mode is an unconstrained dense matrix (used by the non-equivariant
// ablation).
//
// Materialized matrices are applied to quadrature-weighted inputs: rho_reg
// input entries carry weight 2*pi/k_reg so that circle integrals are uniform
// Riemann sums.
class PointwiseLinear {
 public:
  PointwiseLinear() = default;
  PointwiseLinear(RepSpec in, RepSpec out, LinMode mode = LinMode::Equivariant);

  const RepSpec& in() const { return in_; }
  const RepSpec& out() const { return out_; }
  LinMode mode() const { return mode_; }
  int param_count() const { return param_count_; }

  // M is row-major out.dim() x in.dim(), overwritten.
  void materialize(std::span<const double> params, std::span<double> M) const;
  // Accumulates d(loss)/d(params) given d(loss)/d(M).
  void project_grad(std::span<const double> M_bar,
                    std::span<double> params_bar) const;

 private:
  RepSpec in_, out_;
  LinMode mode_ = LinMode::Equivariant;
  int param_count_ = 0;
};

enum class KernelMode { Equivariant, Free };
enum class InterpMode { Bilinear, Nearest };

// Materialized per-grid-node matrices. Node (t, m) lives at
// grid[((t * k_r) + m) * od * id]. bull is the od x id bullseye matrix.
struct MaterializedKernel {
  int od = 0, id = 0, k_theta = 0, k_r = 0;
  std::vector<double> grid;
  std::vector<double> bull;

  const double* node(int t, int m) const {
    return grid.data() + (static_cast<size_t>(t) * k_r + m) *
                             static_cast<size_t>(od) * id;
  }
  double* node(int t, int m) {
    return grid.data() + (static_cast<size_t>(t) * k_r + m) *
                             static_cast<size_t>(od) * id;
  }
};

// Structure of a continuous-convolution kernel over the polar grid.
// Equivariant mode stores the fundamental domain only: one free matrix per
// ring K(0, r_m) plus the constrained bullseye map K(0, 0); every other grid
// node is the conjugated copy rho_out(theta_t) K(0, r_m) rho_in(-theta_t).
// Free mode stores every (theta, r) node independently (weight sharing
// disabled).
class ConvKernelShape {
 public:
  ConvKernelShape() = default;
  ConvKernelShape(PolarGridSpec grid, RepSpec in, RepSpec out,
                  KernelMode mode = KernelMode::Equivariant);

  const PolarGridSpec& grid() const { return grid_; }
  const RepSpec& in() const { return in_; }
  const RepSpec& out() const { return out_; }
  KernelMode mode() const { return mode_; }
  const PointwiseLinear& bullseye() const { return bullseye_; }

  int ring_param_count() const;
  int bullseye_param_count() const;

  void materialize(std::span<const double> ring, std::span<const double> bull,
                   MaterializedKernel& mk) const;

  // Pulls gradients in materialized layout back to parameter layout
  // (accumulating). For the equivariant mode this is conjugation by -theta_t
  // summed over slices; for free mode it is the identity.
  void ring_grad(std::span<const double> grid_bar,
                 std::span<double> ring_bar) const;
  void bullseye_grad(std::span<const double> bull_bar,
                     std::span<double> params_bar) const;

 private:
  PolarGridSpec grid_;
  RepSpec in_, out_;
  KernelMode mode_ = KernelMode::Equivariant;
  PointwiseLinear bullseye_;
};

// Trainable kernel = shape + parameter arrays (standalone aggregate used by
// tests and the lab; the model keeps parameters in its registry).
struct PolarKernel {
  ConvKernelShape shape;
  std::vector<double> ring;
  std::vector<double> bull;
};

// Interpolation footprint of a displacement: either the bullseye or up to 4
// surrounding grid nodes with bilinear weights (1 node in Nearest mode).
struct KernelFootprint {
  bool bullseye = false;
  int n = 0;
  int node[4] = {0, 0, 0, 0};  // t * k_r + m
  double w[4] = {0, 0, 0, 0};
};

KernelFootprint kernel_footprint(const PolarGridSpec& grid, Vec2 dx,
                                 InterpMode mode);

// Evaluates the kernel matrix at a displacement (|dx| <= R required).
// M is row-major out.dim() x in.dim().
void eval_kernel(const ConvKernelShape& shape, std::span<const double> ring,
                 std::span<const double> bull, Vec2 dx, std::span<double> M,
                 InterpMode mode = InterpMode::Bilinear);
void eval_kernel(const PolarKernel& k, Vec2 dx, std::span<double> M,
                 InterpMode mode = InterpMode::Bilinear);
void eval_kernel_cached(const MaterializedKernel& mk,
                        const PolarGridSpec& grid, Vec2 dx,
                        std::span<double> M,
                        InterpMode mode = InterpMode::Bilinear);

MaterializedKernel materialize_grid(const PolarKernel& k);

// Conjugation of a single matrix: out = rho_out(theta) W rho_in(-theta) with
// cos/sin of theta given explicitly and reg_shift = theta * k_reg / (2*pi)
// (must be the exact integer shift for any rho_reg block present).
void conjugate_matrix(const RepSpec& in, const RepSpec& out, double c, double s,
                      int reg_shift, std::span<const double> W,
                      std::span<double> M);

// Integral transform of a torus-kernel entry block: out(phi2) =
// (2*pi/k) * sum_phi1 M(phi2, phi1) f(phi1).
RegFunction torus_apply(std::span<const double> M, const RegFunction& f);

}  // namespace ecco
