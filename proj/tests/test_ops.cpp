#include <cmath>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "ops.hpp"
#include "rng.hpp"

using namespace ecco;

namespace {

std::vector<double> random_vec(Rng& rng, int n, double a = 1.0) {
  std::vector<double> v(static_cast<size_t>(n));
  for (auto& x : v) x = rng.uniform(-a, a);
  return v;
}

PolarKernel random_kernel(Rng& rng, PolarGridSpec grid, RepSpec in, RepSpec out,
                          KernelMode mode = KernelMode::Equivariant) {
  PolarKernel k;
  k.shape = ConvKernelShape(grid, in, out, mode);
  k.ring = random_vec(rng, k.shape.ring_param_count());
  k.bull = random_vec(rng, k.shape.bullseye_param_count());
  return k;
}

FeatureField random_field(Rng& rng, const RepSpec& spec, PointSet pts) {
  FeatureField f;
  f.spec = spec;
  f.values = random_vec(rng, spec.dim() * pts.size());
  f.points = std::move(pts);
  return f;
}

PointSet random_points(Rng& rng, int n, double box) {
  PointSet ps;
  for (int i = 0; i < n; ++i)
    ps.pts.push_back({rng.uniform(-box, box), rng.uniform(-box, box)});
  return ps;
}

// Direct double-loop evaluation of the windowed convolution sum.
FeatureField naive_cts_conv(const PolarKernel& k, const AttentionWindow& win,
                            const FeatureField& src, const PointSet& queries) {
  const int id = k.shape.in().dim();
  const int od = k.shape.out().dim();
  const auto q = entry_quadrature(k.shape.in());
  FeatureField out;
  out.points = queries;
  out.spec = k.shape.out();
  out.values.assign(static_cast<size_t>(queries.size()) * od, 0.0);
  std::vector<double> M(static_cast<size_t>(od) * id);
  for (int i = 0; i < queries.size(); ++i) {
    for (int j = 0; j < src.size(); ++j) {
      const Vec2 dx = src.points.pts[j] - queries.pts[i];
      const double r = norm(dx);
      if (r > win.R) continue;
      eval_kernel(k, dx, M);
      for (int ro = 0; ro < od; ++ro) {
        double acc = 0.0;
        for (int ci = 0; ci < id; ++ci)
          acc += M[static_cast<size_t>(ro) * id + ci] * q[ci] *
                 src.values[static_cast<size_t>(j) * id + ci];
        out.values[static_cast<size_t>(i) * od + ro] += win(r) * acc;
      }
    }
  }
  return out;
}

FeatureField rotate_field(Rotation rot, const FeatureField& f) {
  FeatureField out = f;
  for (auto& p : out.points.pts) p = act_rho1(rot, p);
  for (int i = 0; i < f.size(); ++i) act_field(rot, f.spec, f.row(i), out.row(i));
  return out;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("attention window shape") {
  AttentionWindow w{2.0, AttentionWindow::Kind::Smooth};
  CHECK(w(0.0) == 1.0);
  CHECK(w(2.0) == 0.0);
  CHECK(w(2.5) == 0.0);
  double prev = 1.0;
  for (int i = 1; i <= 20; ++i) {
    double v = w(2.0 * i / 20);
    CHECK(v <= prev);  // non-increasing on [0, R]
    prev = v;
  }
  AttentionWindow box{2.0, AttentionWindow::Kind::Boxcar};
  CHECK(box(0.0) == 1.0);
  CHECK(box(1.999) == 1.0);
  CHECK(box(2.001) == 0.0);
}

TEST_CASE("cts_conv basics") {
  Rng rng(41);
  PolarGridSpec g = PolarGridSpec::make(4, 2, 1.0);
  RepSpec r1 = RepSpec::rho1(1);
  PolarKernel k = random_kernel(rng, g, r1, r1);
  AttentionWindow win{g.R};

  // no neighbors within R -> zero output
  FeatureField src = random_field(rng, r1, PointSet{{{10.0, 10.0}}});
  PointSet far{{{0.0, 0.0}}};
  FeatureField out = cts_conv(k, win, src, far);
  CHECK(out.values[0] == 0.0);
  CHECK(out.values[1] == 0.0);

  // single source at the query point: bullseye map times features (a(0)=1)
  FeatureField self = random_field(rng, r1, PointSet{{{1.0, -2.0}}});
  out = cts_conv(k, win, self, self.points);
  std::vector<double> E(4);
  k.shape.bullseye().materialize(k.bull, E);
  CHECK(out.values[0] == doctest::Approx(E[0] * self.values[0] +
                                         E[1] * self.values[1]));
  CHECK(out.values[1] == doctest::Approx(E[2] * self.values[0] +
                                         E[3] * self.values[1]));

  // representation mismatch
  FeatureField bad = random_field(rng, RepSpec::rho1(2), PointSet{{{0, 0}}});
  CHECK_THROWS(cts_conv(k, win, bad, bad.points));
}

TEST_CASE("cts_conv matches the naive double loop") {
  Rng rng(42);
  struct Case {
    RepSpec in, out;
  };
  const Case cases[] = {
      {RepSpec::rho1(1), RepSpec::rho1(1)},
      {RepSpec::rho1(2), RepSpec::rhoreg(1, 8)},
      {RepSpec::rhoreg(1, 8), RepSpec::mixed(1, 1, 8)},
      {RepSpec::mixed(1, 1, 8), RepSpec::rhoreg(2, 8)},
  };
  for (const auto& c : cases) {
    PolarGridSpec g = PolarGridSpec::make(4, 2, 1.5);
    PolarKernel k = random_kernel(rng, g, c.in, c.out);
    AttentionWindow win{g.R};
    PointSet pts = random_points(rng, 5, 1.2);
    FeatureField src = random_field(rng, c.in, pts);
    FeatureField fast = cts_conv(k, win, src, pts);
    FeatureField slow = naive_cts_conv(k, win, src, pts);
    CHECK(max_abs_diff(fast.values, slow.values) < 1e-12);
  }
}

TEST_CASE("layer equivariance at grid angles for all pairings") {
  Rng rng(43);
  const int k_theta = 4, k_reg = 8;
  PolarGridSpec g = PolarGridSpec::make(k_theta, 2, 1.5);
  const RepSpec r1 = RepSpec::rho1(2);
  const RepSpec rr = RepSpec::rhoreg(2, k_reg);
  const std::pair<RepSpec, RepSpec> pairings[] = {
      {r1, r1}, {r1, rr}, {rr, r1}, {rr, rr}};
  AttentionWindow win{g.R};

  for (const auto& [in, out] : pairings) {
    PolarKernel k = random_kernel(rng, g, in, out);
    PointSet pts = random_points(rng, 8, 1.0);
    FeatureField src = random_field(rng, in, pts);
    FeatureField base = cts_conv(k, win, src, pts);
    for (int m = 0; m < k_theta; ++m) {
      const Rotation rot = Rotation::from(kTwoPi * m / k_theta);
      FeatureField rot_in = rotate_field(rot, src);
      FeatureField out_of_rot = cts_conv(k, win, rot_in, rot_in.points);
      FeatureField rot_of_out = rotate_field(rot, base);
      CHECK(max_abs_diff(out_of_rot.values, rot_of_out.values) < 1e-8);
    }
  }
}

TEST_CASE("translation invariance of cts_conv") {
  Rng rng(44);
  PolarGridSpec g = PolarGridSpec::make(8, 2, 1.5);
  RepSpec in = RepSpec::mixed(1, 1, 8), out = RepSpec::rhoreg(1, 8);
  PolarKernel k = random_kernel(rng, g, in, out);
  AttentionWindow win{g.R};
  for (int trial = 0; trial < 100; ++trial) {
    PointSet pts = random_points(rng, 6, 1.0);
    FeatureField src = random_field(rng, in, pts);
    FeatureField base = cts_conv(k, win, src, pts);
    const Vec2 t{rng.uniform(-100, 100), rng.uniform(-100, 100)};
    FeatureField moved = src;
    for (auto& p : moved.points.pts) p += t;
    FeatureField shifted = cts_conv(k, win, moved, moved.points);
    CHECK(max_abs_diff(base.values, shifted.values) < 1e-10);
  }
}

TEST_CASE("permutation invariance of cts_conv is exact") {
  Rng rng(45);
  PolarGridSpec g = PolarGridSpec::make(4, 2, 1.5);
  RepSpec in = RepSpec::rhoreg(1, 8), out = RepSpec::rhoreg(1, 8);
  PolarKernel k = random_kernel(rng, g, in, out);
  AttentionWindow win{g.R};
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 7;
    PointSet pts = random_points(rng, n, 1.0);
    FeatureField src = random_field(rng, in, pts);
    FeatureField base = cts_conv(k, win, src, pts);

    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    for (int i = n - 1; i > 0; --i)
      std::swap(perm[i], perm[rng.uniform_int(i + 1)]);
    FeatureField perm_src;
    perm_src.spec = in;
    perm_src.values.resize(src.values.size());
    perm_src.points.pts.resize(static_cast<size_t>(n));
    const int d = in.dim();
    for (int i = 0; i < n; ++i) {
      perm_src.points.pts[perm[i]] = pts.pts[i];
      std::copy(src.values.begin() + i * d, src.values.begin() + (i + 1) * d,
                perm_src.values.begin() + perm[i] * d);
    }
    FeatureField permuted = cts_conv(k, win, perm_src, perm_src.points);
    const int od = out.dim();
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < od; ++c)
        CHECK(permuted.values[static_cast<size_t>(perm[i]) * od + c] ==
              base.values[static_cast<size_t>(i) * od + c]);
  }
}

TEST_CASE("equi_linear Table-1 cases") {
  // rho1 -> rho_reg with (a,b)=(1,0), c=1, k_reg=4: samples (1, 0, -1, 0)
  {
    PointwiseLinear lin(RepSpec::rho1(1), RepSpec::rhoreg(1, 4));
    REQUIRE(lin.param_count() == 1);
    FeatureField f;
    f.points.pts = {{0, 0}};
    f.spec = RepSpec::rho1(1);
    f.values = {1.0, 0.0};
    std::vector<double> params = {1.0};
    FeatureField out = equi_linear(lin, params, f);
    REQUIRE(out.values.size() == 4);
    CHECK(out.values[0] == doctest::Approx(1.0));
    CHECK(out.values[1] == doctest::Approx(0.0));
    CHECK(out.values[2] == doctest::Approx(-1.0));
    CHECK(out.values[3] == doctest::Approx(0.0));
  }

  // round trip rho1 -> rho_reg -> rho1 with c=1 scales by exactly pi
  for (int k : {4, 8, 16}) {
    PointwiseLinear up(RepSpec::rho1(1), RepSpec::rhoreg(1, k));
    PointwiseLinear down(RepSpec::rhoreg(1, k), RepSpec::rho1(1));
    std::vector<double> one = {1.0};
    Rng rng(46);
    for (int trial = 0; trial < 10; ++trial) {
      FeatureField f;
      f.points.pts = {{0, 0}};
      f.spec = RepSpec::rho1(1);
      f.values = {rng.uniform(-2, 2), rng.uniform(-2, 2)};
      FeatureField round = equi_linear(down, one, equi_linear(up, one, f));
      CHECK(std::abs(round.values[0] - kPi * f.values[0]) < 1e-10);
      CHECK(std::abs(round.values[1] - kPi * f.values[1]) < 1e-10);
    }
  }

  // rho_reg -> rho_reg with quadrature-normalized delta kappa is the identity
  {
    const int k = 8;
    PointwiseLinear lin(RepSpec::rhoreg(1, k), RepSpec::rhoreg(1, k));
    REQUIRE(lin.param_count() == k);
    std::vector<double> kappa(static_cast<size_t>(k), 0.0);
    kappa[0] = k / kTwoPi;
    Rng rng(47);
    FeatureField f;
    f.points.pts = {{0, 0}};
    f.spec = RepSpec::rhoreg(1, k);
    f.values = random_vec(rng, k);
    FeatureField out = equi_linear(lin, kappa, f);
    for (int i = 0; i < k; ++i)
      CHECK(out.values[i] == doctest::Approx(f.values[i]).epsilon(1e-12));
  }

  // rho1 -> rho1 is channelwise scaling
  {
    PointwiseLinear lin(RepSpec::rho1(2), RepSpec::rho1(2));
    REQUIRE(lin.param_count() == 4);
    std::vector<double> params = {2.0, 0.0, 0.0, -1.0};  // out x in pairs
    FeatureField f;
    f.points.pts = {{0, 0}};
    f.spec = RepSpec::rho1(2);
    f.values = {1.0, 2.0, 3.0, 4.0};
    FeatureField out = equi_linear(lin, params, f);
    CHECK(out.values[0] == doctest::Approx(2.0));
    CHECK(out.values[1] == doctest::Approx(4.0));
    CHECK(out.values[2] == doctest::Approx(-3.0));
    CHECK(out.values[3] == doctest::Approx(-4.0));
  }
}

TEST_CASE("equi_linear spec mismatch throws") {
  PointwiseLinear lin(RepSpec::rho1(1), RepSpec::rho1(1));
  FeatureField f;
  f.points.pts = {{0, 0}};
  f.spec = RepSpec::rho1(2);
  f.values = {1, 2, 3, 4};
  std::vector<double> p = {1.0};
  CHECK_THROWS(equi_linear(lin, p, f));
}

TEST_CASE("equi_linear equals cts_conv at R -> 0 on coincident points") {
  Rng rng(48);
  const int k_reg = 8;
  RepSpec in = RepSpec::mixed(1, 1, k_reg), out = RepSpec::rhoreg(1, k_reg);
  PolarGridSpec g = PolarGridSpec::make(4, 1, 1e-6);
  PolarKernel k = random_kernel(rng, g, in, out);
  AttentionWindow win{g.R};

  PointwiseLinear lin(in, out);
  PointSet pt{{{3.0, -1.0}}};
  FeatureField f = random_field(rng, in, pt);
  FeatureField via_conv = cts_conv(k, win, f, pt);
  FeatureField via_lin = equi_linear(lin, k.bull, f);
  CHECK(max_abs_diff(via_conv.values, via_lin.values) < 1e-12);
}

TEST_CASE("pointwise nonlinearity") {
  FeatureField f;
  f.points.pts = {{0, 0}};
  f.spec = RepSpec::rhoreg(1, 2);
  f.values = {-1.0, 2.0};
  FeatureField out = pointwise_nonlinearity(f);
  CHECK(out.values[0] == doctest::Approx(-0.01));
  CHECK(out.values[1] == doctest::Approx(2.0));

  f.values = {0.5, 2.0};
  out = pointwise_nonlinearity(f);
  CHECK(out.values[0] == 0.5);
  CHECK(out.values[1] == 2.0);

  FeatureField bad;
  bad.points.pts = {{0, 0}};
  bad.spec = RepSpec::rho1(1);
  bad.values = {1.0, 1.0};
  CHECK_THROWS(pointwise_nonlinearity(bad));
}

TEST_CASE("nonlinearity commutes with exact circular shifts") {
  Rng rng(49);
  const int k = 8;
  RepSpec spec = RepSpec::rhoreg(2, k);
  FeatureField f = random_field(rng, spec, PointSet{{{0, 0}, {1, 1}}});
  for (int m = 0; m < k; ++m) {
    const Rotation rot = Rotation::from(kTwoPi * m / k);
    FeatureField a = pointwise_nonlinearity(rotate_field(rot, f));
    FeatureField b = rotate_field(rot, pointwise_nonlinearity(f));
    for (size_t i = 0; i < a.values.size(); ++i)
      CHECK(a.values[i] == b.values[i]);
  }
}
