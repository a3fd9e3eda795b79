#include "repr.hpp"

#include <cmath>
#include <stdexcept>

namespace ecco {

int RepSpec::dim() const {
  int d = 0;
  for (const auto& b : blocks)
    d += b.copies * (b.kind == RepKind::Rho1 ? 2 : k_reg);
  return d;
}

bool RepSpec::has_reg() const {
  for (const auto& b : blocks)
    if (b.kind == RepKind::RhoReg) return true;
  return false;
}

bool RepSpec::pure_reg() const {
  for (const auto& b : blocks)
    if (b.kind != RepKind::RhoReg) return false;
  return !blocks.empty();
}

bool RepSpec::pure_rho1() const {
  for (const auto& b : blocks)
    if (b.kind != RepKind::Rho1) return false;
  return !blocks.empty();
}

RepSpec RepSpec::rho1(int copies) {
  if (copies <= 0) throw std::invalid_argument("rho1 copies must be positive");
  return RepSpec{{{RepKind::Rho1, copies}}, 1};
}

RepSpec RepSpec::rhoreg(int copies, int k_reg) {
  if (copies <= 0 || k_reg <= 0)
    throw std::invalid_argument("rhoreg copies and k_reg must be positive");
  return RepSpec{{{RepKind::RhoReg, copies}}, k_reg};
}

RepSpec RepSpec::mixed(int rho1_copies, int rhoreg_copies, int k_reg) {
  return RepSpec{
      {{RepKind::Rho1, rho1_copies}, {RepKind::RhoReg, rhoreg_copies}}, k_reg};
}

bool RepSpec::operator==(const RepSpec& o) const {
  if (k_reg != o.k_reg || blocks.size() != o.blocks.size()) return false;
  for (size_t i = 0; i < blocks.size(); ++i)
    if (blocks[i].kind != o.blocks[i].kind ||
        blocks[i].copies != o.blocks[i].copies)
      return false;
  return true;
}

std::vector<double> entry_quadrature(const RepSpec& spec) {
  std::vector<double> q;
  q.reserve(static_cast<size_t>(spec.dim()));
  double qreg = kTwoPi / spec.k_reg;
  for (const auto& b : spec.blocks) {
    if (b.kind == RepKind::Rho1) {
      q.insert(q.end(), static_cast<size_t>(2 * b.copies), 1.0);
    } else {
      q.insert(q.end(), static_cast<size_t>(spec.k_reg * b.copies), qreg);
    }
  }
  return q;
}

namespace {

// Fractional circular index of angle phi on a k-sample grid. Positions within
// 1e-9 of an integer snap to it, so grid-aligned rotations are exact shifts.
struct CircPos {
  int i0;
  int i1;
  double frac;
};

CircPos circ_pos(double phi, int k) {
  double u = wrap_angle(phi) * k / kTwoPi;
  double r = std::round(u);
  if (std::abs(u - r) < 1e-9) {
    int i = static_cast<int>(r) % k;
    return {i, i, 0.0};
  }
  int i0 = static_cast<int>(std::floor(u));
  double frac = u - i0;
  i0 %= k;
  return {i0, (i0 + 1) % k, frac};
}

}  // namespace

double RegFunction::eval(double phi) const {
  int k = size();
  CircPos p = circ_pos(phi, k);
  if (p.frac == 0.0) return samples[p.i0];
  return (1.0 - p.frac) * samples[p.i0] + p.frac * samples[p.i1];
}

RegFunction act_rhoreg(Rotation rot, const RegFunction& f) {
  int k = f.size();
  RegFunction out;
  out.samples.resize(static_cast<size_t>(k));
  // (rho_reg(theta) f)(phi) = f(phi - theta); a shift by s slots when
  // theta = s * 2*pi/k.
  CircPos p = circ_pos(rot.theta, k);
  if (p.frac == 0.0) {
    int s = p.i0;
    for (int i = 0; i < k; ++i)
      out.samples[i] = f.samples[((i - s) % k + k) % k];
    return out;
  }
  for (int i = 0; i < k; ++i) {
    double phi = kTwoPi * i / k - rot.theta;
    out.samples[i] = f.eval(phi);
  }
  return out;
}

void act_field(Rotation rot, const RepSpec& spec, std::span<const double> in,
               std::span<double> out) {
  if (static_cast<int>(in.size()) != spec.dim() || in.size() != out.size())
    throw std::invalid_argument("act_field: dimension mismatch");
  int k = spec.k_reg;
  CircPos p = circ_pos(rot.theta, k);
  double c = std::cos(rot.theta), s = std::sin(rot.theta);
  int off = 0;
  for (const auto& b : spec.blocks) {
    if (b.kind == RepKind::Rho1) {
      for (int cp = 0; cp < b.copies; ++cp) {
        double x = in[off], y = in[off + 1];
        out[off] = c * x - s * y;
        out[off + 1] = s * x + c * y;
        off += 2;
      }
    } else {
      for (int cp = 0; cp < b.copies; ++cp) {
        if (p.frac == 0.0) {
          int sh = p.i0;
          for (int i = 0; i < k; ++i)
            out[off + i] = in[off + ((i - sh) % k + k) % k];
        } else {
          for (int i = 0; i < k; ++i) {
            CircPos q = circ_pos(kTwoPi * i / k - rot.theta, k);
            out[off + i] =
                (1.0 - q.frac) * in[off + q.i0] + q.frac * in[off + q.i1];
          }
        }
        off += k;
      }
    }
  }
}

std::vector<double> act_field(Rotation rot, const RepSpec& spec,
                              std::span<const double> in) {
  std::vector<double> out(in.size());
  act_field(rot, spec, in, out);
  return out;
}

}  // namespace ecco
