#pragma once

#include <array>
#include <span>
#include <vector>

#include "geometry.hpp"

namespace ecco {

// A planar rotation, stored as an angle normalized to [0, 2*pi).
struct Rotation {
  double theta = 0.0;

  static Rotation from(double angle) { return Rotation{wrap_angle(angle)}; }
  Rotation compose(Rotation other) const { return from(theta + other.theta); }
  Rotation inverse() const { return from(-theta); }

  // Row-major 2x2 matrix [[c, -s], [s, c]].
  std::array<double, 4> matrix() const {
    double c = std::cos(theta), s = std::sin(theta);
    return {c, -s, s, c};
  }
};

inline Vec2 act_rho1(Rotation rot, Vec2 v) {
  double c = std::cos(rot.theta), s = std::sin(rot.theta);
  return {c * v.x - s * v.y, s * v.x + c * v.y};
}

enum class RepKind { Rho1, RhoReg };

struct RepBlock {
  RepKind kind;
  int copies;
};

// The representation type of a feature field: an ordered list of rho_1 /
// rho_reg blocks plus the shared circle sample count k_reg.
struct RepSpec {
  std::vector<RepBlock> blocks;
  int k_reg = 1;

  int dim() const;
  bool has_reg() const;
  bool pure_reg() const;
  bool pure_rho1() const;

  static RepSpec rho1(int copies);
  static RepSpec rhoreg(int copies, int k_reg);
  static RepSpec mixed(int rho1_copies, int rhoreg_copies, int k_reg);

  bool operator==(const RepSpec& o) const;
};

// Quadrature weight per flat entry: 1 for rho_1 slots, 2*pi/k_reg for rho_reg
// samples (circle integrals are uniform Riemann sums).
std::vector<double> entry_quadrature(const RepSpec& spec);

// A function on the circle sampled at k angles 2*pi*i/k, evaluated elsewhere
// by circular linear interpolation.
struct RegFunction {
  std::vector<double> samples;

  int size() const { return static_cast<int>(samples.size()); }
  double eval(double phi) const;
};

// Regular representation action: result samples are f evaluated at
// (2*pi*i/k - theta). Grid-aligned rotations are exact circular shifts.
RegFunction act_rhoreg(Rotation rot, const RegFunction& f);

// Applies the blockwise representation action to a flat feature vector.
void act_field(Rotation rot, const RepSpec& spec, std::span<const double> in,
               std::span<double> out);
std::vector<double> act_field(Rotation rot, const RepSpec& spec,
                              std::span<const double> in);

}  // namespace ecco
