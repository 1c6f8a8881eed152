#include <catch_amalgamated.hpp>

#include <boost/math/quadrature/exp_sinh.hpp>

#include <cmath>
#include <filesystem>
#include <random>

#include "sbp/sbp.hpp"

using namespace sbp;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

ComplexField random_small(const GridSpec& g, unsigned seed, double amp) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  ComplexField u(g, Space::frequency);
  for_each_index(g.dim, g.n, [&](std::size_t idx, int i, int j, int k) {
    int m = std::max({std::abs(g.mode(i)), std::abs(g.mode(j)), std::abs(g.mode(k))});
    if (m <= 4) u[idx] = cplx{nd(rng), nd(rng)};
  });
  ComplexField v = ifft(u);
  RVector r2 = radius_squared(g);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] *= std::exp(-0.1 * r2[i]);
  double s = amp / max_abs(v);
  for (auto& x : v.values) x *= s;
  return v;
}

SimConfig small_config() {
  SimConfig c;
  c.dim = 2;
  c.n = 64;
  c.eps = 0.3;
  c.dt = 0.01;
  c.t_end = 0.5;
  c.snapshot_stride = 10;
  c.gaussian.width = std::sqrt(2.0);
  return c;
}

// peak relative energy drift over [0, T] sampled every step
double peak_energy_drift(const GridSpec& g, ComplexField u, double dt, double T) {
  StrangStepper st(g, dt, {});
  double e0 = conserved_quantities(u, st.kernel()).energy, peak = 0.0;
  long long steps = std::llround(T / dt);
  for (long long s = 0; s < steps; ++s) {
    st.advance(u, 1);
    peak = std::max(peak, std::abs(conserved_quantities(u, st.kernel()).energy - e0));
  }
  return peak / std::abs(e0);
}

}  // namespace

TEST_CASE("gamma defaults and the admissible interval") {
  CHECK(default_gamma(2) == 1.5);
  CHECK_THAT(default_gamma(3), WithinAbs(19.0 / 12.0, 1e-15));
  auto c = small_config();
  CHECK(c.gamma_value() == 1.5);
  c.dim = 3;
  CHECK_THAT(c.gamma_value(), WithinAbs(19.0 / 12.0, 1e-15));
  c.gamma = 1.7;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.gamma = 1.6;
  CHECK_NOTHROW(c.validate());
  c = small_config();
  c.eps = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config();
  c.dt = -1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config();
  c.gaussian.width = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("config from key-value text") {
  auto kv = KeyValues::parse_string("dim = 3\nn = 32\neps = 0.1\ndt = 0.01\nt_end = 1\ngamma = 1.7\n", "x.cfg");
  try {
    (void)SimConfig::from_keys(kv);
    FAIL("expected a ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("gamma") != std::string::npos);
  }
  auto bad = KeyValues::parse_string("dim = 2\nn = 32\neps = x\n", "y.cfg");
  try {
    (void)SimConfig::from_keys(bad);
    FAIL("expected a ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("y.cfg:3") != std::string::npos);
  }
  auto missing = KeyValues::parse_string("dim = 2\nn = 32\n", "z.cfg");
  CHECK_THROWS_WITH(SimConfig::from_keys(missing), Catch::Matchers::ContainsSubstring("eps"));
  auto c = small_config();
  auto again = SimConfig::from_keys(KeyValues::parse_string(c.echo()));
  CHECK(again.echo() == c.echo());
}

TEST_CASE("initial data normalization") {
  auto c = small_config();
  auto g = resolve_grid(c);
  for (double eps : {0.01, 0.3, 2.0}) {
    c.eps = eps;
    auto u = prepare_initial_data(c, g);
    CHECK_THAT(norms(u, 1.5).h_gamma_gamma(), WithinRel(eps, 1e-10));
  }
}

TEST_CASE("unit Gaussian H^{gamma,gamma} norm matches radial quadrature") {
  // u = exp(-|x|^2/2) in 2D, gamma = 3/2; u_hat = exp(-|xi|^2/2)
  const double gamma = 1.5;
  boost::math::quadrature::exp_sinh<double> q;
  double sob2 = 2.0 * pi * q.integrate([&](double r) { return r > 40.0 ? 0.0 : std::pow(1.0 + r * r, gamma) * std::exp(-r * r) * r; });
  double wt2 = 2.0 * pi * q.integrate([&](double r) { return r > 40.0 ? 0.0 : std::pow(r, 2.0 * gamma) * std::exp(-r * r) * r; });
  double oracle = std::sqrt(sob2) + std::sqrt(wt2);
  auto g = GridSpec::make(2, 512, 25.6);
  GaussianFamily f;
  f.width = 1.0;
  auto u = gaussian_member(g, f, 0);
  CHECK_THAT(norms(u, gamma).h_gamma_gamma(), WithinRel(oracle, 1e-6));
  f.width = 0.0;
  CHECK_THROWS_AS(gaussian_member(g, f, 0), std::invalid_argument);
}

TEST_CASE("nonlinear potential") {
  auto g = GridSpec::make(2, 32, 16.0);
  auto km = build_multiplier(Lattice::physical(g));
  ComplexField z(g, Space::physical);
  for (double v : nonlinear_potential(z, km)) CHECK(v == 0.0);

  // single occupied site
  ComplexField p(g, Space::physical);
  const std::size_t site = 10 * 32 + 20;
  p[site] = cplx{0.6, -0.8};
  auto V = nonlinear_potential(p, km);
  const double w = g.cell_volume();
  for_each_index(2, 32, [&](std::size_t idx, int i, int j, int) {
    double dx = g.coord(i) - g.coord(10), dy = g.coord(j) - g.coord(20);
    double expect = w * kernel_value(std::sqrt(dx * dx + dy * dy)) - (idx == site ? 1.0 : 0.0);
    CHECK_THAT(V[idx], WithinAbs(expect, 1e-13));
  });

  // 2D: the power part of V u is |u| u, homogeneous of degree 2
  auto u = random_small(g, 3, 0.7);
  auto Vp = nonlinear_potential(u, km, {0.0, 1.0});
  for (std::size_t i = 0; i < u.size(); ++i) CHECK_THAT(Vp[i], WithinRel(-std::abs(u[i]), 1e-15));
  auto g3 = GridSpec::make(3, 16, 8.0);
  auto u3 = random_small(g3, 4, 0.7);
  auto V3 = nonlinear_potential(u3, build_multiplier(Lattice::physical(g3)), {0.0, 1.0});
  for (std::size_t i = 0; i < u3.size(); i += 7) CHECK_THAT(V3[i], WithinRel(-std::pow(std::norm(u3[i]), 1.0 / 3.0), 1e-14));
}

TEST_CASE("energy: finite-difference variation reproduces the equation") {
  for (int dim : {2, 3}) {
    auto g = dim == 2 ? GridSpec::make(2, 32, 16.0) : GridSpec::make(3, 16, 10.0);
    auto km = build_multiplier(Lattice::physical(g));
    auto u = random_small(g, 11, 0.5);
    auto grad = energy_gradient(u, km);
    for (unsigned seed : {1u, 2u, 3u}) {
      auto v = random_small(g, 100 + seed, 0.5);
      const double eta = 1e-4;
      ComplexField up = u, um = u;
      for (std::size_t i = 0; i < u.size(); ++i) {
        up[i] += eta * v[i];
        um[i] -= eta * v[i];
      }
      double fd = (conserved_quantities(up, km).energy - conserved_quantities(um, km).energy) / (2.0 * eta);
      double an = 0.0;
      for (std::size_t i = 0; i < u.size(); ++i) an += 2.0 * (std::conj(grad[i]) * v[i]).real();
      an *= g.cell_volume();
      CHECK_THAT(fd, WithinRel(an, 1e-5));
    }
  }
  auto g = GridSpec::make(2, 32, 16.0);
  ComplexField z(g, Space::physical);
  auto q = conserved_quantities(z, build_multiplier(Lattice::physical(g)));
  CHECK(q.mass == 0.0);
  CHECK(q.energy == 0.0);
}

TEST_CASE("mass of prepared data equals the squared L2 norm") {
  auto c = small_config();
  auto g = resolve_grid(c);
  auto u = prepare_initial_data(c, g);
  auto km = build_multiplier(Lattice::physical(g));
  CHECK_THAT(conserved_quantities(u, km).mass, WithinRel(std::pow(norms(u, 1.5).l2, 2), 1e-14));
}

TEST_CASE("Strang stepper: linear exactness and fixed points") {
  auto g = GridSpec::make(2, 64, 24.0);
  auto u = random_small(g, 5, 1.0);
  StrangStepper lin(g, 0.01, {0.0, 0.0});
  auto v = u;
  lin.advance(v, 50);
  CHECK(relative_l2(v, free_propagate(u, 0.5)) < 1e-12);

  StrangStepper st(g, 0.01, {});
  ComplexField z(g, Space::physical);
  st.advance(z, 10);
  CHECK(max_abs(z) == 0.0);

  // advance(n) equals n single steps
  auto a = u, b = u;
  st.advance(a, 7);
  for (int s = 0; s < 7; ++s) st.advance(b, 1);
  CHECK(relative_l2(a, b) < 1e-13);

  ComplexField bad = u;
  bad[5] = cplx{std::nan(""), 0.0};
  CHECK_THROWS_AS(st.advance(bad, 1), NumericalAbort);
}

TEST_CASE("Strang stepper: local error is third order") {
  auto g = GridSpec::make(2, 64, 24.0);
  auto u = random_small(g, 8, 1.0);
  auto local = [&](double dt) {
    auto one = u, two = u;
    StrangStepper(g, dt, {}).advance(one, 1);
    StrangStepper(g, dt / 2.0, {}).advance(two, 2);
    return relative_l2(one, two);
  };
  double r = local(0.04) / local(0.02);
  CHECK(r > 6.5);
  CHECK(r < 9.5);
}

TEST_CASE("mass conservation and gauge covariance") {
  auto g = GridSpec::make(2, 64, 24.0);
  auto u = random_small(g, 21, 1.0);
  StrangStepper st(g, 0.005, {});
  auto km = st.kernel();
  double m0 = conserved_quantities(u, km).mass;
  auto v = u;
  st.advance(v, 2000);
  CHECK(std::abs(conserved_quantities(v, km).mass - m0) / m0 < 1e-10);

  const cplx phase = std::polar(1.0, 0.9);
  auto w = u;
  for (auto& x : w.values) x *= phase;
  st.advance(w, 2000);
  for (auto& x : v.values) x *= phase;
  CHECK(relative_l2(w, v) < 1e-12);
}

TEST_CASE("energy drift and trajectory error are second order in dt") {
  auto g = GridSpec::make(2, 64, 24.0);
  auto u = random_small(g, 31, 1.0);
  double e1 = peak_energy_drift(g, u, 0.02, 1.0), e2 = peak_energy_drift(g, u, 0.01, 1.0);
  CHECK(e1 / e2 > 3.5);
  CHECK(e1 / e2 < 4.5);

  auto at = [&](double dt) {
    auto v = u;
    StrangStepper(g, dt, {}).advance(v, std::llround(1.0 / dt));
    return v;
  };
  auto a = at(0.04), b = at(0.02), c = at(0.01);
  double order = std::log2(relative_l2(a, b) / relative_l2(b, c));
  CHECK(order > 1.8);
  CHECK(order < 2.2);
}

TEST_CASE("run: trajectory, monitors and restart") {
  auto c = small_config();
  c.t_end = 0.0;
  auto r0 = run(c);
  REQUIRE(r0.series.size() == 1);
  CHECK(r0.series[0].t == 0.0);
  CHECK(r0.completed);

  c.t_end = 1.0;
  int calls = 0;
  double last = -1.0;
  auto full = run(c, [&](const SnapshotView& s) {
    CHECK(s.t > last);
    last = s.t;
    ++calls;
  });
  CHECK(calls == 11);
  CHECK(full.series.size() == 11);
  CHECK(std::abs(full.series.back().mass - full.series.front().mass) / full.series.front().mass < 1e-12);
  CHECK(full.series.back().t == 1.0);

  auto dir = std::filesystem::temp_directory_path() / "sbp_restart_test";
  std::filesystem::remove_all(dir);
  RunOptions first;
  first.checkpoint_dir = dir.string();
  first.checkpoint_every = 1;
  first.stop_after_steps = 40;
  auto part = run(c, {}, first);
  CHECK_FALSE(part.completed);
  CHECK(part.steps == 40);
  RunOptions second;
  second.resume_from = dir.string();
  auto rest = run(c, {}, second);
  CHECK(rest.completed);
  REQUIRE(rest.final_u.size() == full.final_u.size());
  for (std::size_t i = 0; i < rest.final_u.size(); ++i) REQUIRE(rest.final_u[i] == full.final_u[i]);
  REQUIRE(rest.series.size() == full.series.size());
  for (std::size_t i = 0; i < rest.series.size(); ++i) CHECK(format_series_row(rest.series[i]) == format_series_row(full.series[i]));
  std::filesystem::remove_all(dir);
}

TEST_CASE("run: preflight box rule and resolution monitor") {
  auto c = small_config();
  c.box = 10.0;
  CHECK_THROWS_WITH(run(c), Catch::Matchers::ContainsSubstring("box too small"));
  c = small_config();
  auto est = gaussian_box_estimate(c);
  CHECK(resolve_grid(c).box_length == est.required_length);
  c.n = 16;  // under-resolved
  CHECK_THROWS_WITH(run(c), Catch::Matchers::ContainsSubstring("too coarse"));
}
