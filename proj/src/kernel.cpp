#include "kernel.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace ecco {

PolarGridSpec PolarGridSpec::make(int k_theta, int k_r, double R) {
  if (k_theta < 1 || k_r < 1 || !(R > 0.0))
    throw std::invalid_argument("PolarGridSpec: bad parameters");
  PolarGridSpec g;
  g.k_theta = k_theta;
  g.k_r = k_r;
  g.R = R;
  g.R_e = R / (k_r + 1);
  return g;
}

namespace {

int equi_param_count(const RepSpec& in, const RepSpec& out) {
  int n = 0;
  for (const auto& ob : out.blocks) {
    for (int oc = 0; oc < ob.copies; ++oc) {
      for (const auto& ib : in.blocks) {
        for (int ic = 0; ic < ib.copies; ++ic) {
          (void)oc;
          (void)ic;
          n += (ob.kind == RepKind::RhoReg && ib.kind == RepKind::RhoReg)
                   ? in.k_reg
                   : 1;
        }
      }
    }
  }
  return n;
}

struct TrigTable {
  std::vector<double> c, s;
  explicit TrigTable(int k) : c(k), s(k) {
    for (int i = 0; i < k; ++i) {
      c[i] = std::cos(kTwoPi * i / k);
      s[i] = std::sin(kTwoPi * i / k);
    }
  }
};

}  // namespace

PointwiseLinear::PointwiseLinear(RepSpec in, RepSpec out, LinMode mode)
    : in_(std::move(in)), out_(std::move(out)), mode_(mode) {
  if (in_.has_reg() && out_.has_reg() && in_.k_reg != out_.k_reg)
    throw std::invalid_argument("PointwiseLinear: mismatched k_reg");
  param_count_ = (mode_ == LinMode::Free)
                     ? in_.dim() * out_.dim()
                     : equi_param_count(in_, out_);
}

void PointwiseLinear::materialize(std::span<const double> params,
                                  std::span<double> M) const {
  const int id = in_.dim(), od = out_.dim();
  if (static_cast<int>(params.size()) != param_count_ ||
      static_cast<int>(M.size()) != id * od)
    throw std::invalid_argument("PointwiseLinear::materialize: bad sizes");
  if (mode_ == LinMode::Free) {
    std::copy(params.begin(), params.end(), M.begin());
    return;
  }
  std::fill(M.begin(), M.end(), 0.0);
  const int k = std::max(in_.k_reg, out_.k_reg);
  TrigTable trig(k);
  int p = 0;
  int ro = 0;
  for (const auto& ob : out_.blocks) {
    const int osz = ob.kind == RepKind::Rho1 ? 2 : k;
    for (int oc = 0; oc < ob.copies; ++oc, ro += osz) {
      int ci = 0;
      for (const auto& ib : in_.blocks) {
        const int isz = ib.kind == RepKind::Rho1 ? 2 : k;
        for (int ic = 0; ic < ib.copies; ++ic, ci += isz) {
          if (ob.kind == RepKind::Rho1 && ib.kind == RepKind::Rho1) {
            const double c = params[p++];
            M[static_cast<size_t>(ro) * id + ci] = c;
            M[static_cast<size_t>(ro + 1) * id + ci + 1] = c;
          } else if (ob.kind == RepKind::RhoReg && ib.kind == RepKind::Rho1) {
            const double c = params[p++];
            for (int i = 0; i < k; ++i) {
              M[static_cast<size_t>(ro + i) * id + ci] = c * trig.c[i];
              M[static_cast<size_t>(ro + i) * id + ci + 1] = c * trig.s[i];
            }
          } else if (ob.kind == RepKind::Rho1 && ib.kind == RepKind::RhoReg) {
            const double c = params[p++];
            for (int j = 0; j < k; ++j) {
              M[static_cast<size_t>(ro) * id + ci + j] = c * trig.c[j];
              M[static_cast<size_t>(ro + 1) * id + ci + j] = c * trig.s[j];
            }
          } else {
            // circulant from kappa samples
            for (int i = 0; i < k; ++i)
              for (int j = 0; j < k; ++j)
                M[static_cast<size_t>(ro + i) * id + ci + j] =
                    params[p + ((i - j) % k + k) % k];
            p += k;
          }
        }
      }
    }
  }
}

void PointwiseLinear::project_grad(std::span<const double> M_bar,
                                   std::span<double> params_bar) const {
  const int id = in_.dim(), od = out_.dim();
  if (static_cast<int>(params_bar.size()) != param_count_ ||
      static_cast<int>(M_bar.size()) != id * od)
    throw std::invalid_argument("PointwiseLinear::project_grad: bad sizes");
  if (mode_ == LinMode::Free) {
    for (int i = 0; i < id * od; ++i) params_bar[i] += M_bar[i];
    return;
  }
  const int k = std::max(in_.k_reg, out_.k_reg);
  TrigTable trig(k);
  int p = 0;
  int ro = 0;
  for (const auto& ob : out_.blocks) {
    const int osz = ob.kind == RepKind::Rho1 ? 2 : k;
    for (int oc = 0; oc < ob.copies; ++oc, ro += osz) {
      int ci = 0;
      for (const auto& ib : in_.blocks) {
        const int isz = ib.kind == RepKind::Rho1 ? 2 : k;
        for (int ic = 0; ic < ib.copies; ++ic, ci += isz) {
          if (ob.kind == RepKind::Rho1 && ib.kind == RepKind::Rho1) {
            params_bar[p++] += M_bar[static_cast<size_t>(ro) * id + ci] +
                               M_bar[static_cast<size_t>(ro + 1) * id + ci + 1];
          } else if (ob.kind == RepKind::RhoReg && ib.kind == RepKind::Rho1) {
            double g = 0.0;
            for (int i = 0; i < k; ++i)
              g += trig.c[i] * M_bar[static_cast<size_t>(ro + i) * id + ci] +
                   trig.s[i] * M_bar[static_cast<size_t>(ro + i) * id + ci + 1];
            params_bar[p++] += g;
          } else if (ob.kind == RepKind::Rho1 && ib.kind == RepKind::RhoReg) {
            double g = 0.0;
            for (int j = 0; j < k; ++j)
              g += trig.c[j] * M_bar[static_cast<size_t>(ro) * id + ci + j] +
                   trig.s[j] * M_bar[static_cast<size_t>(ro + 1) * id + ci + j];
            params_bar[p++] += g;
          } else {
            for (int i = 0; i < k; ++i)
              for (int j = 0; j < k; ++j)
                params_bar[p + ((i - j) % k + k) % k] +=
                    M_bar[static_cast<size_t>(ro + i) * id + ci + j];
            p += k;
          }
        }
      }
    }
  }
}

void conjugate_matrix(const RepSpec& in, const RepSpec& out, double c, double s,
                      int reg_shift, std::span<const double> W,
                      std::span<double> M) {
  const int id = in.dim(), od = out.dim();
  const int k_in = in.k_reg, k_out = out.k_reg;
  thread_local std::vector<double> tmp;
  tmp.resize(W.size());

  // rows: tmp = rho_out(theta) * W
  int ro = 0;
  for (const auto& b : out.blocks) {
    if (b.kind == RepKind::Rho1) {
      for (int cp = 0; cp < b.copies; ++cp, ro += 2) {
        const double* w0 = W.data() + static_cast<size_t>(ro) * id;
        const double* w1 = W.data() + static_cast<size_t>(ro + 1) * id;
        double* t0 = tmp.data() + static_cast<size_t>(ro) * id;
        double* t1 = tmp.data() + static_cast<size_t>(ro + 1) * id;
        for (int j = 0; j < id; ++j) {
          t0[j] = c * w0[j] - s * w1[j];
          t1[j] = s * w0[j] + c * w1[j];
        }
      }
    } else {
      for (int cp = 0; cp < b.copies; ++cp, ro += k_out) {
        for (int i = 0; i < k_out; ++i) {
          const int srci = ((i - reg_shift) % k_out + k_out) % k_out;
          std::memcpy(tmp.data() + static_cast<size_t>(ro + i) * id,
                      W.data() + static_cast<size_t>(ro + srci) * id,
                      sizeof(double) * static_cast<size_t>(id));
        }
      }
    }
  }

  // cols: M = tmp * rho_in(-theta)
  int ci = 0;
  for (const auto& b : in.blocks) {
    if (b.kind == RepKind::Rho1) {
      for (int cp = 0; cp < b.copies; ++cp, ci += 2) {
        for (int r = 0; r < od; ++r) {
          const double a0 = tmp[static_cast<size_t>(r) * id + ci];
          const double a1 = tmp[static_cast<size_t>(r) * id + ci + 1];
          M[static_cast<size_t>(r) * id + ci] = c * a0 - s * a1;
          M[static_cast<size_t>(r) * id + ci + 1] = s * a0 + c * a1;
        }
      }
    } else {
      for (int cp = 0; cp < b.copies; ++cp, ci += k_in) {
        for (int j = 0; j < k_in; ++j) {
          const int srcj = ((j - reg_shift) % k_in + k_in) % k_in;
          for (int r = 0; r < od; ++r)
            M[static_cast<size_t>(r) * id + ci + j] =
                tmp[static_cast<size_t>(r) * id + ci + srcj];
        }
      }
    }
  }
}

ConvKernelShape::ConvKernelShape(PolarGridSpec grid, RepSpec in, RepSpec out,
                                 KernelMode mode)
    : grid_(grid), in_(std::move(in)), out_(std::move(out)), mode_(mode) {
  if (in_.has_reg() && out_.has_reg() && in_.k_reg != out_.k_reg)
    throw std::invalid_argument("ConvKernelShape: mismatched k_reg");
  if (mode_ == KernelMode::Equivariant && (in_.has_reg() || out_.has_reg())) {
    const int k = in_.has_reg() ? in_.k_reg : out_.k_reg;
    if (k % grid_.k_theta != 0)
      throw std::invalid_argument(
          "ConvKernelShape: k_reg must be a multiple of k_theta");
  }
  bullseye_ = PointwiseLinear(
      in_, out_,
      mode_ == KernelMode::Equivariant ? LinMode::Equivariant : LinMode::Free);
}

int ConvKernelShape::ring_param_count() const {
  const int per = in_.dim() * out_.dim();
  return mode_ == KernelMode::Equivariant
             ? grid_.k_r * per
             : grid_.k_theta * grid_.k_r * per;
}

int ConvKernelShape::bullseye_param_count() const {
  return bullseye_.param_count();
}

void ConvKernelShape::materialize(std::span<const double> ring,
                                  std::span<const double> bull,
                                  MaterializedKernel& mk) const {
  const int od = out_.dim(), id = in_.dim();
  const int mat = od * id;
  if (static_cast<int>(ring.size()) != ring_param_count() ||
      static_cast<int>(bull.size()) != bullseye_param_count())
    throw std::invalid_argument("ConvKernelShape::materialize: bad sizes");
  mk.od = od;
  mk.id = id;
  mk.k_theta = grid_.k_theta;
  mk.k_r = grid_.k_r;
  mk.grid.resize(static_cast<size_t>(grid_.k_theta) * grid_.k_r * mat);
  mk.bull.resize(static_cast<size_t>(mat));
  bullseye_.materialize(bull, mk.bull);
  if (mode_ == KernelMode::Free) {
    std::copy(ring.begin(), ring.end(), mk.grid.begin());
    return;
  }
  const int k_reg = in_.has_reg() ? in_.k_reg
                    : out_.has_reg() ? out_.k_reg
                                     : grid_.k_theta;  // unused without reg
  for (int t = 0; t < grid_.k_theta; ++t) {
    const double ang = kTwoPi * t / grid_.k_theta;
    const double c = std::cos(ang), s = std::sin(ang);
    const int shift = (in_.has_reg() || out_.has_reg())
                          ? t * (k_reg / grid_.k_theta)
                          : 0;
    for (int m = 0; m < grid_.k_r; ++m) {
      conjugate_matrix(
          in_, out_, c, s, shift,
          {ring.data() + static_cast<size_t>(m) * mat, static_cast<size_t>(mat)},
          {mk.node(t, m), static_cast<size_t>(mat)});
    }
  }
}

void ConvKernelShape::ring_grad(std::span<const double> grid_bar,
                                std::span<double> ring_bar) const {
  const int od = out_.dim(), id = in_.dim();
  const int mat = od * id;
  if (mode_ == KernelMode::Free) {
    for (size_t i = 0; i < grid_bar.size(); ++i) ring_bar[i] += grid_bar[i];
    return;
  }
  const int k_reg = in_.has_reg() ? in_.k_reg
                    : out_.has_reg() ? out_.k_reg
                                     : grid_.k_theta;
  std::vector<double> tmp(static_cast<size_t>(mat));
  for (int t = 0; t < grid_.k_theta; ++t) {
    const double ang = kTwoPi * t / grid_.k_theta;
    // transpose of conjugation by theta is conjugation by -theta
    const double c = std::cos(ang), s = -std::sin(ang);
    const int shift = (in_.has_reg() || out_.has_reg())
                          ? -t * (k_reg / grid_.k_theta)
                          : 0;
    for (int m = 0; m < grid_.k_r; ++m) {
      conjugate_matrix(in_, out_, c, s, shift,
                       {grid_bar.data() +
                            (static_cast<size_t>(t) * grid_.k_r + m) * mat,
                        static_cast<size_t>(mat)},
                       tmp);
      double* dst = ring_bar.data() + static_cast<size_t>(m) * mat;
      for (int i = 0; i < mat; ++i) dst[i] += tmp[i];
    }
  }
}

void ConvKernelShape::bullseye_grad(std::span<const double> bull_bar,
                                    std::span<double> params_bar) const {
  bullseye_.project_grad(bull_bar, params_bar);
}

KernelFootprint kernel_footprint(const PolarGridSpec& grid, Vec2 dx,
                                 InterpMode mode) {
  KernelFootprint fp;
  const double r = norm(dx);
  if (r > grid.R * (1.0 + 1e-12))
    throw std::domain_error("eval_kernel: displacement outside cutoff");
  if (r <= grid.R_e) {
    fp.bullseye = true;
    return fp;
  }
  const double theta = wrap_angle(std::atan2(dx.y, dx.x));
  const double u = theta * grid.k_theta / kTwoPi;
  const double w = grid.ring_width();
  double p = (r - grid.ring_center(0)) / w;
  if (p < 0.0) p = 0.0;
  if (p > grid.k_r - 1) p = grid.k_r - 1;

  if (mode == InterpMode::Nearest) {
    int t = static_cast<int>(std::round(u)) % grid.k_theta;
    int m = static_cast<int>(std::round(p));
    if (m > grid.k_r - 1) m = grid.k_r - 1;
    fp.n = 1;
    fp.node[0] = t * grid.k_r + m;
    fp.w[0] = 1.0;
    return fp;
  }

  int t0 = static_cast<int>(std::floor(u));
  double wt = u - t0;
  t0 %= grid.k_theta;
  const int t1 = (t0 + 1) % grid.k_theta;
  int m0 = static_cast<int>(std::floor(p));
  if (m0 > grid.k_r - 1) m0 = grid.k_r - 1;
  const double wr = p - m0;
  const int m1 = m0 + 1 <= grid.k_r - 1 ? m0 + 1 : m0;
  fp.n = 4;
  fp.node[0] = t0 * grid.k_r + m0;
  fp.w[0] = (1.0 - wt) * (1.0 - wr);
  fp.node[1] = t0 * grid.k_r + m1;
  fp.w[1] = (1.0 - wt) * wr;
  fp.node[2] = t1 * grid.k_r + m0;
  fp.w[2] = wt * (1.0 - wr);
  fp.node[3] = t1 * grid.k_r + m1;
  fp.w[3] = wt * wr;
  return fp;
}

void eval_kernel(const ConvKernelShape& shape, std::span<const double> ring,
                 std::span<const double> bull, Vec2 dx, std::span<double> M,
                 InterpMode mode) {
  const int mat = shape.in().dim() * shape.out().dim();
  if (static_cast<int>(M.size()) != mat)
    throw std::invalid_argument("eval_kernel: bad output size");
  const KernelFootprint fp = kernel_footprint(shape.grid(), dx, mode);
  if (fp.bullseye) {
    shape.bullseye().materialize(bull, M);
    return;
  }
  std::fill(M.begin(), M.end(), 0.0);
  const auto& g = shape.grid();
  const RepSpec& in = shape.in();
  const RepSpec& out = shape.out();
  const bool reg = in.has_reg() || out.has_reg();
  const int k_reg = in.has_reg() ? in.k_reg : out.k_reg;
  std::vector<double> node_mat(static_cast<size_t>(mat));
  for (int i = 0; i < fp.n; ++i) {
    if (fp.w[i] == 0.0) continue;
    const int t = fp.node[i] / g.k_r;
    const int m = fp.node[i] % g.k_r;
    const double* src;
    if (shape.mode() == KernelMode::Free) {
      src = ring.data() + static_cast<size_t>(fp.node[i]) * mat;
    } else {
      const double ang = kTwoPi * t / g.k_theta;
      conjugate_matrix(in, out, std::cos(ang), std::sin(ang),
                       reg ? t * (k_reg / g.k_theta) : 0,
                       {ring.data() + static_cast<size_t>(m) * mat,
                        static_cast<size_t>(mat)},
                       node_mat);
      src = node_mat.data();
    }
    for (int j = 0; j < mat; ++j) M[j] += fp.w[i] * src[j];
  }
}

void eval_kernel(const PolarKernel& k, Vec2 dx, std::span<double> M,
                 InterpMode mode) {
  eval_kernel(k.shape, k.ring, k.bull, dx, M, mode);
}

void eval_kernel_cached(const MaterializedKernel& mk, const PolarGridSpec& grid,
                        Vec2 dx, std::span<double> M, InterpMode mode) {
  const int mat = mk.od * mk.id;
  const KernelFootprint fp = kernel_footprint(grid, dx, mode);
  if (fp.bullseye) {
    std::copy(mk.bull.begin(), mk.bull.end(), M.begin());
    return;
  }
  std::fill(M.begin(), M.end(), 0.0);
  for (int i = 0; i < fp.n; ++i) {
    if (fp.w[i] == 0.0) continue;
    const double* src =
        mk.grid.data() + static_cast<size_t>(fp.node[i]) * mat;
    for (int j = 0; j < mat; ++j) M[j] += fp.w[i] * src[j];
  }
}

MaterializedKernel materialize_grid(const PolarKernel& k) {
  MaterializedKernel mk;
  k.shape.materialize(k.ring, k.bull, mk);
  return mk;
}

RegFunction torus_apply(std::span<const double> M, const RegFunction& f) {
  const int k = f.size();
  if (static_cast<int>(M.size()) != k * k)
    throw std::invalid_argument("torus_apply: size mismatch");
  RegFunction out;
  out.samples.assign(static_cast<size_t>(k), 0.0);
  const double q = kTwoPi / k;
  for (int i = 0; i < k; ++i) {
    double acc = 0.0;
    const double* row = M.data() + static_cast<size_t>(i) * k;
    for (int j = 0; j < k; ++j) acc += row[j] * f.samples[j];
    out.samples[i] = q * acc;
  }
  return out;
}

}  // namespace ecco
