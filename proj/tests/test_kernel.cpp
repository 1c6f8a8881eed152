#include <catch_amalgamated.hpp>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <cmath>
#include <random>

#include "sbp/sbp.hpp"

using namespace sbp;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;
using boost::math::quadrature::gauss_kronrod;

namespace {

RVector random_density(std::size_t count, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  RVector r(count);
  for (auto& v : r) v = ud(rng);
  return r;
}

// O(N^2) linear convolution with the sampled kernel.
RVector direct_convolution(const Lattice& lat, const RVector& rho, double t = 0.5) {
  const int n = lat.n, d = lat.dim;
  RVector out(rho.size(), 0.0);
  const double w = std::pow(lat.spacing, d);
  std::vector<std::array<int, 3>> idx(rho.size());
  for_each_index(d, n, [&](std::size_t f, int i, int j, int k) { idx[f] = {i, j, k}; });
  for (std::size_t a = 0; a < rho.size(); ++a) {
    double s = 0.0;
    for (std::size_t b = 0; b < rho.size(); ++b) {
      double dx = (idx[a][0] - idx[b][0]) * lat.spacing, dy = (idx[a][1] - idx[b][1]) * lat.spacing;
      double dz = (idx[a][2] - idx[b][2]) * lat.spacing;
      s += kernel_t_value(std::sqrt(dx * dx + dy * dy + dz * dz), t) * rho[b];
    }
    out[a] = s * w;
  }
  return out;
}

double max_rel(const RVector& a, const RVector& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num = std::max(num, std::abs(a[i] - b[i]));
    den = std::max(den, std::abs(b[i]));
  }
  return num / den;
}

// Closed forms of the multiplier checked against 1D radial transforms. The
// Coulomb part 1/r has the elementary transform 1/xi (2D: int J0(xi r) dr,
// 3D: int sin(xi r) dr, both in the Abel sense); the Yukawa remainder decays
// exponentially and is integrated numerically.
double oracle_multiplier(int dim, double xi) {
  if (dim == 2) {
    double yuk = gauss_kronrod<double, 61>::integrate(
        [&](double r) { return std::exp(-r) * std::cyl_bessel_j(0.0, xi * r); }, 0.0, 60.0, 25, 1e-13);
    return 1.0 / xi - yuk;
  }
  double yuk = gauss_kronrod<double, 61>::integrate([&](double r) { return std::exp(-r) * std::sin(xi * r); }, 0.0,
                                                    60.0, 25, 1e-13);
  return std::sqrt(2.0 / pi) / xi * (1.0 / xi - yuk);
}

}  // namespace

TEST_CASE("kernel values") {
  CHECK(kernel_value(0.0) == 1.0);
  CHECK_THAT(kernel_value(1.0), WithinAbs(0.6321205588285577, 1e-15));
  CHECK_THAT(kernel_value(std::array<double, 3>{0.6, 0.8, 0.0}), WithinAbs(1.0 - std::exp(-1.0), 1e-15));
  for (double r = 1e-6; r < 200.0; r *= 1.37) {
    CHECK(kernel_value(r) > 0.0);
    CHECK(kernel_value(r) <= std::min(1.0, 1.0 / r));
  }
  CHECK(kernel_t_value(0.0, 3.0) == 6.0);
  CHECK_THAT(kernel_t_value(2.0, 1e6), WithinRel(0.5, 1e-14));
  for (double r : {0.0, 0.3, 1.0, 7.0}) CHECK_THAT(kernel_t_value(r, 0.5), WithinRel(kernel_value(r), 1e-15));
  CHECK_THROWS_AS(kernel_t_value(1.0, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(kernel_t_value(1.0, -2.0), std::invalid_argument);
}

TEST_CASE("pointwise domination K <= K_t <= 1/|x| on a grid") {
  auto g = GridSpec::make(2, 64, 20.0);
  for (double t : {0.5, 1.0, 3.0, 40.0}) {
    for_each_index(2, g.n, [&](std::size_t, int i, int j, int) {
      double r = std::hypot(g.coord(i), g.coord(j));
      if (r == 0.0) return;
      double k = kernel_value(r), kt = kernel_t_value(r, t);
      CHECK(k <= kt * (1.0 + 1e-15));
      CHECK(kt <= (1.0 / r) * (1.0 + 1e-15));
      CHECK(kt <= 2.0 * t);
    });
  }
}

TEST_CASE("analytic multipliers agree with radial quadrature") {
  CHECK_THAT(kernel_multiplier_analytic(3, 1.0), WithinRel(std::sqrt(2.0 / pi) / 2.0, 1e-15));
  for (double xi : {0.05, 0.3, 1.0, 2.7, 9.0}) {
    CHECK_THAT(kernel_multiplier_analytic(2, xi), WithinRel(oracle_multiplier(2, xi), 1e-9));
    CHECK_THAT(kernel_multiplier_analytic(3, xi), WithinRel(oracle_multiplier(3, xi), 1e-9));
  }
  // 2D asymptotics: Coulomb tail at small xi, kink of K at large xi
  CHECK_THAT(kernel_multiplier_analytic(2, 1e-7) * 1e-7, WithinRel(1.0, 1e-6));
  CHECK_THAT(kernel_multiplier_analytic(2, 1e4) * 1e12, WithinRel(0.5, 1e-6));
  CHECK_THROWS_AS(kernel_multiplier_analytic(2, 0.0), std::domain_error);
  // K_t transform by scaling
  for (double t : {0.5, 2.0})
    CHECK_THAT(kernel_t_multiplier_analytic(2, 1.3, t),
               WithinRel(1.0 / 1.3 - 1.0 / std::sqrt(1.3 * 1.3 + 4.0 * t * t), 1e-12));
}

TEST_CASE("build_multiplier tables") {
  auto g = GridSpec::make(2, 32, 16.0);
  auto lat = Lattice::physical(g);
  auto ks = build_multiplier(lat, 0.5, MultiplierMode::sampled);
  auto ka = build_multiplier(lat, 0.5, MultiplierMode::analytic);
  CHECK(ks.m == 64);
  CHECK(ks.table.size() == 64u * 33u);
  CHECK_THAT(ka.table[0], WithinRel(ks.table[0], 1e-13));  // zero-mode policy: sampled-box value
  for (double v : ka.table) {
    CHECK(std::isfinite(v));
    CHECK(v >= 0.0);
  }
  for (double v : ks.table) CHECK(std::isfinite(v));
  CHECK_THROWS_AS(build_multiplier(lat, 0.5, MultiplierMode::analytic, 2, ZeroModePolicy::reject), std::domain_error);
  CHECK_THROWS_AS(build_multiplier(lat, 0.0), std::invalid_argument);

  // zero mode = (2 pi)^{-d/2} * Riemann sum of K over the padded box
  double s = 0.0;
  for (int i = 0; i < 64; ++i)
    for (int j = 0; j < 64; ++j) {
      auto disp = [](int a) { return (a <= 32 ? a : a - 64) * 0.5; };
      s += kernel_value(std::hypot(disp(i), disp(j)));
    }
  CHECK_THAT(ks.table[0], WithinRel(s * 0.25 / (2.0 * pi), 1e-12));

  // K_{1/2} is K in both modes; screening time increases the analytic multiplier
  auto k1 = build_multiplier(lat, 1.0, MultiplierMode::analytic);
  auto k4 = build_multiplier(lat, 4.0, MultiplierMode::analytic);
  for (std::size_t i = 1; i < ka.table.size(); ++i) {
    CHECK(k1.table[i] >= ka.table[i]);
    CHECK(k4.table[i] >= k1.table[i]);
  }
  auto k1s = build_multiplier(lat, 1.0, MultiplierMode::sampled);
  CHECK(k1s.table[0] >= ks.table[0]);
}

TEST_CASE("padded convolution equals the direct sum") {
  auto g = GridSpec::make(2, 16, 6.0);
  auto lat = Lattice::physical(g);
  auto rho = random_density(g.size(), 17);
  auto km = build_multiplier(lat);
  CHECK(max_rel(convolve(km, rho), direct_convolution(lat, rho)) < 1e-12);
  auto km_t = build_multiplier(lat, 2.5);
  CHECK(max_rel(convolve(km_t, rho), direct_convolution(lat, rho, 2.5)) < 1e-12);

  auto g3 = GridSpec::make(3, 8, 5.0);
  auto lat3 = Lattice::physical(g3);
  auto rho3 = random_density(g3.size(), 3);
  CHECK(max_rel(convolve(build_multiplier(lat3), rho3), direct_convolution(lat3, rho3)) < 1e-12);
}

TEST_CASE("discrete delta reproduces the kernel") {
  auto g = GridSpec::make(2, 32, 16.0);
  auto lat = Lattice::physical(g);
  auto km = build_multiplier(lat);
  RVector rho(g.size(), 0.0);
  const int i0 = 12, j0 = 19;
  const double w = 2.5;
  rho[static_cast<std::size_t>(i0) * 32 + j0] = w / g.cell_volume();
  auto out = convolve(km, rho);
  double worst = 0.0;
  for_each_index(2, 32, [&](std::size_t idx, int i, int j, int) {
    double r = std::hypot((i - i0) * g.spacing(), (j - j0) * g.spacing());
    worst = std::max(worst, std::abs(out[idx] - w * kernel_value(r)));
  });
  CHECK(worst < 1e-12);
}

TEST_CASE("convolution: zero, positivity, linearity, translation") {
  auto g = GridSpec::make(2, 32, 10.0);
  auto lat = Lattice::physical(g);
  auto km = build_multiplier(lat);
  RVector zero(g.size(), 0.0);
  for (double v : convolve(km, zero)) CHECK(v == 0.0);

  auto a = random_density(g.size(), 1), b = random_density(g.size(), 2);
  auto ca = convolve(km, a), cb = convolve(km, b);
  double mx = 0.0;
  for (double v : ca) mx = std::max(mx, v);
  for (double v : ca) CHECK(v >= -1e-12 * mx);

  RVector lin(g.size());
  for (std::size_t i = 0; i < lin.size(); ++i) lin[i] = 2.0 * a[i] - 0.5 * b[i];
  auto cl = convolve(km, lin);
  for (std::size_t i = 0; i < lin.size(); ++i) CHECK_THAT(cl[i], WithinAbs(2.0 * ca[i] - 0.5 * cb[i], 1e-12 * mx));

  // density supported away from the last row, shifted by one cell along axis 0
  RVector s0(g.size(), 0.0), s1(g.size(), 0.0);
  for_each_index(2, 32, [&](std::size_t idx, int i, int j, int) {
    if (i >= 4 && i < 20 && j >= 6 && j < 25) s0[idx] = a[idx];
  });
  for_each_index(2, 32, [&](std::size_t idx, int i, int j, int) {
    if (i >= 1) s1[idx] = s0[static_cast<std::size_t>(i - 1) * 32 + j];
  });
  auto c0 = convolve(km, s0), c1 = convolve(km, s1);
  for_each_index(2, 32, [&](std::size_t idx, int i, int j, int) {
    if (i >= 1) CHECK_THAT(c1[idx], WithinAbs(c0[static_cast<std::size_t>(i - 1) * 32 + j], 1e-12 * mx));
  });
}

TEST_CASE("frequency-ordered convolution matches centered convolution") {
  auto g = GridSpec::make(2, 16, 6.0);
  auto lat = Lattice::frequency(g);
  auto km = build_multiplier(lat);
  auto rho = random_density(g.size(), 8);
  // build the DFT-ordered copy by hand
  RVector dft(g.size());
  for_each_index(2, 16, [&](std::size_t idx, int i, int j, int) {
    dft[static_cast<std::size_t>((i + 8) % 16) * 16 + (j + 8) % 16] = rho[idx];
  });
  auto c = convolve(km, rho);
  auto cd = convolve_dft_ordered(km, dft);
  for_each_index(2, 16, [&](std::size_t idx, int i, int j, int) {
    CHECK(cd[static_cast<std::size_t>((i + 8) % 16) * 16 + (j + 8) % 16] == c[idx]);
  });
}

TEST_CASE("box norms of K against a nested quadrature oracle") {
  // int over [-L/2, L/2]^2 of K^p = 8 int_0^{L/2} dx int_0^x K(sqrt(x^2 + y^2))^p dy
  auto oracle = [](double p, double L) {
    auto inner = [&](double x) {
      return gauss_kronrod<double, 31>::integrate(
          [&](double y) { return std::pow(kernel_value(std::hypot(x, y)), p); }, 0.0, x, 10, 1e-13);
    };
    return 8.0 * gauss_kronrod<double, 31>::integrate(inner, 0.0, 0.5 * L, 15, 1e-12);
  };
  double o32 = oracle(2.5, 32.0), o64 = oracle(2.5, 64.0);
  CHECK_THAT(kernel_box_integral(2, 2.5, 32.0), WithinRel(o32, 1e-5));
  CHECK_THAT(kernel_box_integral(2, 2.5, 64.0), WithinRel(o64, 1e-5));
  CHECK_THAT(kernel_box_integral(2, 2.0, 64.0), WithinRel(oracle(2.0, 64.0), 1e-5));

  auto rep = lemma1_report(2, 2.0, {16.0, 32.0, 64.0, 128.0});
  CHECK(rep.regime == "log");
  REQUIRE(rep.log_slope_ratio.size() == 3);
  for (double r : rep.log_slope_ratio) CHECK_THAT(r, WithinAbs(1.0, 0.01));
  for (std::size_t i = 1; i < rep.rows.size(); ++i) CHECK(rep.rows[i].norm > rep.rows[i - 1].norm);

  auto sup = lemma1_report(2, INFINITY, {8.0, 16.0});
  CHECK(sup.rows[0].norm == 1.0);
  CHECK_THROWS_AS(lemma1_report(2, 2.0, {32.0, 16.0}), std::invalid_argument);
}

TEST_CASE("origin cell average of K_t") {
  // polar oracle: radial integral by quadrature instead of closed form
  auto oracle2 = [](double h, double t) {
    gauss_kronrod<double, 31> gk;
    double a = 0.5 * h;
    double v = gk.integrate([&](double th) {
      double R = a / std::cos(th);
      return gk.integrate([&](double r) { return kernel_t_value(r, t) * r; }, 0.0, R, 15, 1e-13);
    }, -pi / 4.0, pi / 4.0, 15, 1e-13);
    return 4.0 * v / (h * h);
  };
  for (double t : {0.5, 2.0, 40.0})
    for (double h : {0.05, 0.3})
      CHECK_THAT(kernel_t_cell_average(2, h, t), WithinRel(oracle2(h, t), 1e-10));
  // small cells see the bounded peak 2t; large 2th sees the Coulomb cell mean 4 asinh(1)/h
  CHECK_THAT(kernel_t_cell_average(2, 1e-4, 0.5), WithinRel(1.0, 1e-3));
  CHECK_THAT(kernel_t_cell_average(2, 0.2, 1e6), WithinRel(4.0 * std::asinh(1.0) / 0.2, 1e-4));
  CHECK_THAT(kernel_t_cell_average(3, 1e-4, 0.5), WithinRel(1.0, 1e-3));
  // 3D Coulomb cell mean: 6 int_face a/rho^3 rho^2/2 dA / h^3 = 3 a int 1/rho dA / h^3
  gauss_kronrod<double, 31> gk;
  double a = 0.1;
  double face = gk.integrate([&](double y) {
    return gk.integrate([&](double z) { return 1.0 / std::sqrt(a * a + y * y + z * z); }, -a, a, 15, 1e-13);
  }, -a, a, 15, 1e-13);
  CHECK_THAT(kernel_t_cell_average(3, 0.2, 1e6), WithinRel(3.0 * a * face / 0.008, 1e-4));

  auto lat = Lattice{2, 16, 0.3};
  auto km = build_multiplier(lat, 3.0, MultiplierMode::sampled, 2, ZeroModePolicy::sampled_box, OriginSample::cell_average);
  RVector delta(lat.size(), 0.0);
  delta[8 * 16 + 8] = 1.0;
  auto c = convolve(km, delta);
  CHECK_THAT(c[8 * 16 + 8], WithinRel(kernel_t_cell_average(2, 0.3, 3.0) * 0.09, 1e-12));
  CHECK_THAT(c[8 * 16 + 9], WithinRel(kernel_t_value(0.3, 3.0) * 0.09, 1e-12));
}
