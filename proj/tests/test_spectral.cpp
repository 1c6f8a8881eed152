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

ComplexField gaussian(const GridSpec& g, double a = 0.5) {
  ComplexField u(g, Space::physical);
  RVector r2 = radius_squared(g);
  for (std::size_t i = 0; i < u.size(); ++i) u[i] = std::exp(-a * r2[i]);
  return u;
}

// Smooth random field: random low modes times a Gaussian envelope.
ComplexField random_smooth(const GridSpec& g, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  ComplexField u(g, Space::frequency);
  for_each_index(g.dim, g.n, [&](std::size_t idx, int i, int j, int k) {
    int m = std::max({std::abs(g.mode(i)), std::abs(g.mode(j)), std::abs(g.mode(k))});
    if (m <= 6) u[idx] = cplx{nd(rng), nd(rng)};
  });
  ComplexField v = ifft(u);
  RVector r2 = radius_squared(g);
  double s = 0.04 * g.box_length * g.box_length;
  for (std::size_t i = 0; i < v.size(); ++i) v[i] *= std::exp(-r2[i] / s);
  return v;
}

ComplexField random_field(const GridSpec& g, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  ComplexField u(g, Space::physical);
  for (auto& v : u.values) v = cplx{nd(rng), nd(rng)};
  return u;
}

ComplexField plane_wave(const GridSpec& g, std::array<int, 3> m) {
  ComplexField u(g, Space::physical);
  const double dk = g.dxi();
  for_each_index(g.dim, g.n, [&](std::size_t idx, int i, int j, int k) {
    double ph = dk * (m[0] * g.coord(i) + m[1] * g.coord(j) + (g.dim == 3 ? m[2] * g.coord(k) : 0.0));
    u[idx] = std::polar(1.0, ph);
  });
  return u;
}

}  // namespace

TEST_CASE("make_grid examples and errors") {
  auto g = GridSpec::make(2, 8, 16.0);
  CHECK(g.spacing() == 2.0);
  CHECK_THAT(g.dxi(), WithinRel(pi / 8.0, 1e-15));
  auto g3 = GridSpec::make(3, 8, 8.0);
  CHECK(g3.size() == 512u);
  CHECK(g3.cell_volume() == 1.0);
  CHECK_THROWS_AS(GridSpec::make(2, 7, 16.0), std::invalid_argument);
  CHECK_THROWS_AS(GridSpec::make(4, 8, 16.0), std::invalid_argument);
  CHECK_THROWS_AS(GridSpec::make(2, 4, 16.0), std::invalid_argument);
  CHECK_THROWS_AS(GridSpec::make(2, 8, 0.0), std::invalid_argument);
  CHECK(g.spacing() * g.n == g.box_length);
  // DFT order covers [-n/2, n/2) with the Nyquist mode at k = n/2
  CHECK(g.mode(3) == 3);
  CHECK(g.mode(4) == -4);
  CHECK(g.mode(7) == -1);
  for (int m = -4; m < 4; ++m) CHECK(g.mode(g.freq_index(m)) == m);
  CHECK(g.coord(4) == 0.0);
}

TEST_CASE("fft round trip, zero field, tag mismatch") {
  for (int dim : {2, 3}) {
    auto g = GridSpec::make(dim, dim == 2 ? 64 : 16, 10.0);
    auto u = random_field(g, 11);
    auto back = ifft(fft(u));
    CHECK(back.space == Space::physical);
    CHECK(relative_l2(back, u) < 1e-12);
    auto F = fft(u);
    CHECK(relative_l2(fft(ifft(F)), F) < 1e-12);
    ComplexField z(g, Space::physical);
    CHECK(max_abs(fft(z)) == 0.0);
    CHECK_THROWS_AS(ifft(u), std::invalid_argument);
    CHECK_THROWS_AS(fft(F), std::invalid_argument);
  }
}

TEST_CASE("Gaussian transform matches the unitary convention") {
  // oracle for the constant: (2 pi)^{-1/2} int e^{-x^2/2} cos(x xi) dx = e^{-xi^2/2}
  for (double xi : {0.0, 0.7, 2.0}) {
    double q = gauss_kronrod<double, 61>::integrate(
        [&](double x) { return std::exp(-0.5 * x * x) * std::cos(x * xi); }, -40.0, 40.0, 15, 1e-14);
    CHECK_THAT(q / std::sqrt(2.0 * pi), WithinAbs(std::exp(-0.5 * xi * xi), 1e-13));
  }
  auto g = GridSpec::make(2, 256, 32.0);
  auto uh = fft(gaussian(g));
  RVector k2 = frequency_squared(g);
  double worst = 0.0;
  for (std::size_t i = 0; i < uh.size(); ++i) worst = std::max(worst, std::abs(uh[i] - std::exp(-0.5 * k2[i])));
  CHECK(worst < 1e-8);
}

TEST_CASE("Parseval in the scaled convention") {
  for (unsigned seed : {1u, 2u, 3u}) {
    auto g = GridSpec::make(2, 32, 7.0);
    auto u = random_field(g, seed);
    CHECK_THAT(l2_norm(fft(u)), WithinRel(l2_norm(u), 1e-10));
    auto g3 = GridSpec::make(3, 16, 5.0);
    auto v = random_field(g3, seed);
    CHECK_THAT(l2_norm(fft(v)), WithinRel(l2_norm(v), 1e-10));
  }
}

TEST_CASE("apply_multiplier identities") {
  auto g = GridSpec::make(2, 64, 12.0);
  auto u = random_field(g, 5);
  RVector one(g.size(), 1.0);
  CHECK(relative_l2(apply_multiplier(u, one), u) < 1e-12);
  CHECK(relative_l2(fractional_op(u, 0.0, FracKind::bessel), u) < 1e-12);
  CHECK_THROWS_AS(apply_multiplier(u, RVector(10, 1.0)), std::invalid_argument);

  // composition
  RVector m1 = frequency_table(g, [](const auto& xi) { return 1.0 / (1.0 + xi[0] * xi[0]); });
  RVector m2 = frequency_table(g, [](const auto& xi) { return std::cos(xi[1]) + 2.0; });
  RVector m12(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) m12[i] = m1[i] * m2[i];
  CHECK(relative_l2(apply_multiplier(apply_multiplier(u, m1), m2), apply_multiplier(u, m12)) < 1e-12);
}

TEST_CASE("plane waves are eigenfunctions of every multiplier kind") {
  for (int dim : {2, 3}) {
    auto g = GridSpec::make(dim, dim == 2 ? 32 : 16, 9.0);
    for (std::array<int, 3> m : {std::array<int, 3>{1, 0, 0}, {3, -2, 1}, {-5, 4, -2}, {0, 0, 0}}) {
      auto w = plane_wave(g, m);
      double k2 = 0.0;
      for (int a = 0; a < dim; ++a) k2 += std::pow(g.dxi() * m[a], 2);
      CHECK(relative_l2(apply_multiplier(w, frequency_squared(g)), [&] {
              auto c = w;
              for (auto& v : c.values) v *= k2;
              return c;
            }()) < 1e-12 * std::max(1.0, k2));
      for (double gamma : {0.5, 1.5, 2.0}) {
        auto lap = fractional_op(w, gamma, FracKind::laplacian);
        auto bes = fractional_op(w, gamma, FracKind::bessel);
        double el = std::pow(k2, 0.5 * gamma), eb = std::pow(1.0 + k2, 0.5 * gamma);
        for (std::size_t i = 0; i < w.size(); i += 37) {
          CHECK(std::abs(lap[i] - el * w[i]) < 1e-11 * std::max(1.0, el));
          CHECK(std::abs(bes[i] - eb * w[i]) < 1e-11 * eb);
        }
        // weight acts pointwise: modulus becomes |x|^gamma
        auto wt = fractional_op(w, gamma, FracKind::weight);
        RVector r2 = radius_squared(g);
        for (std::size_t i = 0; i < w.size(); i += 41) CHECK_THAT(std::abs(wt[i]), WithinAbs(std::pow(r2[i], 0.5 * gamma), 1e-12));
      }
    }
  }
}

TEST_CASE("fractional_op rejects negative gamma and maps zero to zero") {
  auto g = GridSpec::make(2, 16, 4.0);
  ComplexField z(g, Space::physical);
  CHECK_THROWS_AS(fractional_op(z, -0.5, FracKind::laplacian), std::invalid_argument);
  for (auto k : {FracKind::laplacian, FracKind::bessel, FracKind::weight}) CHECK(max_abs(fractional_op(z, 1.3, k)) == 0.0);
}

TEST_CASE("Bessel potential of a Gaussian against a Hankel-transform oracle") {
  // <grad>^{3/2} e^{-|x|^2/2} at radius r = int_0^inf <rho>^{3/2} e^{-rho^2/2} J0(rho r) rho drho
  auto oracle = [](double r) {
    return gauss_kronrod<double, 61>::integrate(
        [&](double p) { return std::pow(1.0 + p * p, 0.75) * std::exp(-0.5 * p * p) * std::cyl_bessel_j(0.0, p * r) * p; },
        0.0, 40.0, 20, 1e-13);
  };
  CHECK_THAT(oracle(0.0), WithinAbs(2.2029973137161916, 1e-10));
  CHECK_THAT(oracle(1.0), WithinAbs(1.0100693898304851, 1e-10));
  CHECK_THAT(oracle(2.5), WithinAbs(-0.077166049257776784, 1e-10));

  auto g = GridSpec::make(2, 256, 32.0);
  auto v = fractional_op(gaussian(g), 1.5, FracKind::bessel);
  double worst = 0.0;
  for (int i : {128, 130, 136, 140, 150, 170}) {
    for (int j : {128, 133, 145}) {
      double x = g.coord(i), y = g.coord(j);
      double val = v[static_cast<std::size_t>(i) * g.n + j].real();
      worst = std::max(worst, std::abs(val - oracle(std::hypot(x, y))));
    }
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("norms of the unit Gaussian") {
  auto g = GridSpec::make(2, 256, 32.0);
  auto u = gaussian(g);
  auto r = norms(u, 1.5, {2.0, 4.0});
  CHECK_THAT(r.l2, WithinRel(std::sqrt(pi), 1e-8));
  CHECK_THAT(r.linf, WithinAbs(1.0, 1e-15));

  // radial oracles: ||<grad>^g u||^2 = 2 pi int (1+p^2)^g e^{-p^2} p dp, |||x|^g u||^2 = 2 pi int r^{2g+1} e^{-r^2} dr
  double sob2 = 2.0 * pi * gauss_kronrod<double, 61>::integrate(
                               [](double p) { return std::pow(1.0 + p * p, 1.5) * std::exp(-p * p) * p; }, 0.0, 30.0, 20, 1e-14);
  double w2 = 2.0 * pi * gauss_kronrod<double, 61>::integrate(
                             [](double x) { return std::pow(x, 4.0) * std::exp(-x * x); }, 0.0, 30.0, 20, 1e-14);
  CHECK_THAT(sob2, WithinRel(9.6396758325448352, 1e-12));
  CHECK_THAT(w2, WithinRel(4.1762459976237809, 1e-12));
  double expected = std::sqrt(9.6396758325448352) + std::sqrt(4.1762459976237809);
  CHECK_THAT(r.h_gamma_gamma(), WithinRel(expected, 1e-6));
  CHECK_THAT(r.lp[0].second, WithinRel(r.l2, 1e-14));
  CHECK_THAT(r.lp[1].second, WithinRel(std::pow(pi / 2.0, 0.25), 1e-8));

  ComplexField z(g, Space::physical);
  auto rz = norms(z, 1.5, {3.0});
  CHECK(rz.l2 == 0.0);
  CHECK(rz.linf == 0.0);
  CHECK(rz.sobolev_gamma == 0.0);
  CHECK(rz.weighted_gamma == 0.0);
  CHECK(rz.lp[0].second == 0.0);
}

TEST_CASE("Bessel norm dominates L2 and the homogeneous norm") {
  for (unsigned seed : {3u, 4u, 9u}) {
    auto g = GridSpec::make(2, 64, 10.0);
    auto u = random_smooth(g, seed);
    for (double gamma : {0.0, 0.5, 1.5, 2.5}) {
      auto r = norms(u, gamma);
      CHECK(r.sobolev_gamma >= r.l2 * (1.0 - 1e-14));
      CHECK(r.sobolev_gamma >= l2_norm(fractional_op(u, gamma, FracKind::laplacian)) * (1.0 - 1e-14));
      CHECK(r.l2 >= 0.0);
      CHECK(r.weighted_gamma >= 0.0);
    }
  }
}

TEST_CASE("resolution monitors") {
  auto g = GridSpec::make(2, 128, 40.0);
  auto u = gaussian(g);
  CHECK(boundary_mass_fraction(u) < 1e-30);
  CHECK(spectral_tail_fraction(u) < 1e-11);  // FFT roundoff floor
  CHECK(half_box_mass_fraction(u) > 1.0 - 1e-15);
  auto w = plane_wave(g, {60, 0, 0});
  CHECK_THAT(spectral_tail_fraction(w), WithinAbs(1.0, 1e-12));
  ComplexField flat(g, Space::physical);
  for (auto& v : flat.values) v = 1.0;
  CHECK_THAT(boundary_mass_fraction(flat), WithinRel(1.0 - std::pow(1.0 - 4.0 / 128.0, 2), 1e-12));
}

TEST_CASE("snapshot files round trip bit for bit") {
  auto g = GridSpec::make(3, 8, 3.5);
  auto u = random_field(g, 21);
  std::string path = "snapshot_roundtrip.bin";
  write_snapshot(path, u, 1.25);
  auto s = read_snapshot(path);
  CHECK(s.time == 1.25);
  CHECK(s.field.grid == g);
  CHECK(s.field.space == Space::physical);
  CHECK(std::memcmp(s.field.values.data(), u.values.data(), u.size() * sizeof(cplx)) == 0);
  std::remove(path.c_str());
}
