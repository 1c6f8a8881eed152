#pragma once

#include <boost/math/distributions/chi_squared.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sbp/config.hpp"
#include "sbp/fft.hpp"
#include "sbp/kernel.hpp"
#include "sbp/propagator.hpp"
#include "sbp/snapshot_io.hpp"
#include "sbp/spectral.hpp"

namespace sbp {

/// The run cannot continue: NaN/Inf, box too small, unresolved spectrum.
class NumericalAbort : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline double default_gamma(int dim) { return 0.5 + (dim * dim + 4.0) / (4.0 * dim); }

struct GaussianFamily {
  double width = 1.0;  // u0 ~ exp(-|x - c|^2 / (2 width^2)) e^{i k0.x}
  std::array<double, 3> center{0.0, 0.0, 0.0};
  std::array<double, 3> modulation{0.0, 0.0, 0.0};
  double perturbation = 0.0;  // relative size of a seeded smooth random perturbation
};

struct SimConfig {
  int dim = 2;
  int n = 128;
  std::optional<double> box;  // empty: sized by the preflight rule
  double eps = 0.1;
  std::optional<double> gamma;
  double dt = 0.01;
  double t_end = 1.0;
  std::string family = "gaussian";
  GaussianFamily gaussian;
  std::string snapshot_path;
  int snapshot_stride = 10;
  std::uint64_t seed = 0;
  double kernel_coupling = 1.0;
  double power_coupling = 1.0;
  double box_safety = 2.2;
  double boundary_mass_max = 1e-6;
  double spectral_tail_max = 1e-8;

  [[nodiscard]] double gamma_value() const { return gamma ? *gamma : default_gamma(dim); }
  [[nodiscard]] double snapshot_interval() const { return dt * snapshot_stride; }
  [[nodiscard]] long long total_steps() const { return std::llround(t_end / dt); }

  void validate() const {
    if (dim != 2 && dim != 3) throw ConfigError("dim must be 2 or 3, got " + std::to_string(dim));
    if (n < 8 || (n & (n - 1)) != 0) throw ConfigError("n must be a power of two >= 8, got " + std::to_string(n));
    if (box && !(*box > 0.0)) throw ConfigError("box must be positive");
    if (!(eps > 0.0)) throw ConfigError("eps must be > 0");
    double g = gamma_value();
    double lo = 0.5 * dim, hi = 1.0 + 2.0 / dim;
    if (!(g > lo && g < hi)) {
      std::ostringstream os;
      os << "gamma = " << g << " outside (" << lo << ", " << hi << ")";
      throw ConfigError(os.str());
    }
    if (!(dt > 0.0)) throw ConfigError("dt must be > 0");
    if (!(t_end >= 0.0)) throw ConfigError("t_end must be >= 0");
    if (std::abs(total_steps() * dt - t_end) > 1e-9 * std::max(1.0, t_end))
      throw ConfigError("t_end must be a whole number of steps");
    if (snapshot_stride < 1) throw ConfigError("snapshot_stride must be >= 1");
    if (t_end >= 1.0) {
      double k = 1.0 / snapshot_interval();
      if (std::abs(k - std::round(k)) > 1e-9) throw ConfigError("t = 1 must fall on the snapshot grid (dt * snapshot_stride must divide 1)");
    }
    if (family == "gaussian") {
      if (!(gaussian.width > 0.0)) throw ConfigError("gaussian.width must be > 0");
    } else if (family == "snapshot") {
      if (snapshot_path.empty()) throw ConfigError("family = snapshot needs snapshot.path");
    } else {
      throw ConfigError("unknown family '" + family + "'");
    }
    if (!(box_safety >= 1.0)) throw ConfigError("box_safety must be >= 1");
  }

  static SimConfig from_keys(const KeyValues& kv) {
    SimConfig c;
    c.dim = static_cast<int>(kv.get_int("dim"));
    c.n = static_cast<int>(kv.get_int("n"));
    if (kv.has("box") && kv.get_string("box") != "auto") c.box = kv.get_double("box");
    c.eps = kv.get_double("eps");
    if (kv.has("gamma") && kv.get_string("gamma") != "default") c.gamma = kv.get_double("gamma");
    c.dt = kv.get_double("dt");
    c.t_end = kv.get_double("t_end");
    c.family = kv.get_string("family", "gaussian");
    c.gaussian.width = kv.get_double("gaussian.width", c.gaussian.width);
    auto center = kv.get_list("gaussian.center");
    auto mod = kv.get_list("gaussian.modulation");
    for (std::size_t a = 0; a < 3 && a < center.size(); ++a) c.gaussian.center[a] = center[a];
    for (std::size_t a = 0; a < 3 && a < mod.size(); ++a) c.gaussian.modulation[a] = mod[a];
    c.gaussian.perturbation = kv.get_double("gaussian.perturbation", 0.0);
    c.snapshot_path = kv.get_string("snapshot.path", "");
    c.snapshot_stride = static_cast<int>(kv.get_int("snapshot_stride", c.snapshot_stride));
    c.seed = static_cast<std::uint64_t>(kv.get_int("seed", 0));
    c.kernel_coupling = kv.get_double("kernel_coupling", 1.0);
    c.power_coupling = kv.get_double("power_coupling", 1.0);
    c.box_safety = kv.get_double("box_safety", c.box_safety);
    c.boundary_mass_max = kv.get_double("boundary_mass_max", c.boundary_mass_max);
    c.spectral_tail_max = kv.get_double("spectral_tail_max", c.spectral_tail_max);
    kv.require_all_used();
    try {
      c.validate();
    } catch (const ConfigError& e) {
      throw ConfigError((kv.source().empty() ? "" : kv.source() + ": ") + e.what());
    }
    return c;
  }

  /// Text echo readable by from_keys (used in checkpoints and outputs).
  [[nodiscard]] std::string echo() const {
    std::ostringstream os;
    os.precision(17);
    os << "dim = " << dim << "\nn = " << n << "\nbox = ";
    if (box) os << *box; else os << "auto";
    os << "\neps = " << eps << "\ngamma = " << gamma_value() << "\ndt = " << dt << "\nt_end = " << t_end
       << "\nfamily = " << family << "\n";
    if (family == "gaussian") {
      os << "gaussian.width = " << gaussian.width << "\ngaussian.center = " << gaussian.center[0] << ", "
         << gaussian.center[1] << ", " << gaussian.center[2] << "\ngaussian.modulation = " << gaussian.modulation[0]
         << ", " << gaussian.modulation[1] << ", " << gaussian.modulation[2]
         << "\ngaussian.perturbation = " << gaussian.perturbation << "\n";
    } else {
      os << "snapshot.path = " << snapshot_path << "\n";
    }
    os << "snapshot_stride = " << snapshot_stride << "\nseed = " << seed << "\nkernel_coupling = " << kernel_coupling
       << "\npower_coupling = " << power_coupling << "\nbox_safety = " << box_safety
       << "\nboundary_mass_max = " << boundary_mass_max << "\nspectral_tail_max = " << spectral_tail_max << "\n";
    return os.str();
  }
};

// ---- box sizing ------------------------------------------------------------

struct BoxEstimate {
  double mass_radius = 0.0;      // x0: |center| + 99.999% mass radius
  double velocity = 0.0;         // v_max: 2 (|k0| + 99.999% spectral radius)
  double tight_radius = 0.0;     // radius holding all but 1e-8 of the mass
  double required_length = 0.0;  // max(safety * (x0 + v_max t_end), initial-data floor)
};

inline constexpr double box_rule_quantile = 0.99999;
inline constexpr double box_floor_quantile = 1.0 - 1e-8;

/// Short runs: the initial data alone, plus the monitored boundary layer, must fit.
inline double box_floor(double tight_radius, int n) {
  const int b = boundary_layer_cells(n);
  return 2.0 * tight_radius * n / static_cast<double>(n - 2 * b);
}

inline void finish_box_estimate(BoxEstimate& b, const SimConfig& c) {
  b.required_length = std::max(c.box_safety * (b.mass_radius + b.velocity * c.t_end), box_floor(b.tight_radius, c.n));
}

/// Closed-form radii for the Gaussian family: |u0|^2 and |u0_hat|^2 are
/// isotropic normals with per-axis variances w^2/2 and 1/(2w^2).
inline BoxEstimate gaussian_box_estimate(const SimConfig& c) {
  boost::math::chi_squared chi(c.dim);
  double q = std::sqrt(boost::math::quantile(chi, box_rule_quantile));
  double w = c.gaussian.width;
  auto norm3 = [](const std::array<double, 3>& a) { return std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]); };
  BoxEstimate b;
  b.mass_radius = norm3(c.gaussian.center) + q * w / std::sqrt(2.0);
  b.velocity = 2.0 * (norm3(c.gaussian.modulation) + q / (std::sqrt(2.0) * w));
  b.tight_radius = norm3(c.gaussian.center) + std::sqrt(boost::math::quantile(chi, box_floor_quantile)) * w / std::sqrt(2.0);
  finish_box_estimate(b, c);
  return b;
}

/// Radius of the smallest centered ball holding `fraction` of sum w over points at radii r.
inline double quantile_radius(std::vector<std::pair<double, double>> rw, double fraction) {
  std::sort(rw.begin(), rw.end());
  double total = 0.0;
  for (auto& p : rw) total += p.second;
  double acc = 0.0;
  for (auto& p : rw) {
    acc += p.second;
    if (acc >= fraction * total) return p.first;
  }
  return rw.empty() ? 0.0 : rw.back().first;
}

/// Radii measured on sampled data (used for the snapshot family).
inline BoxEstimate measured_box_estimate(const ComplexField& u, const SimConfig& c) {
  const auto& g = u.grid;
  std::vector<std::pair<double, double>> rx, rk;
  rx.reserve(g.size());
  rk.reserve(g.size());
  RVector r2 = radius_squared(g), k2 = frequency_squared(g);
  ComplexField uh = fft(u);
  for (std::size_t i = 0; i < g.size(); ++i) {
    rx.emplace_back(std::sqrt(r2[i]), std::norm(u[i]));
    rk.emplace_back(std::sqrt(k2[i]), std::norm(uh[i]));
  }
  BoxEstimate b;
  b.mass_radius = quantile_radius(rx, box_rule_quantile);
  b.tight_radius = quantile_radius(std::move(rx), box_floor_quantile);
  b.velocity = 2.0 * quantile_radius(std::move(rk), box_rule_quantile);
  finish_box_estimate(b, c);
  return b;
}

// ---- initial data ----------------------------------------------------------

inline ComplexField gaussian_member(const GridSpec& g, const GaussianFamily& f, std::uint64_t seed) {
  if (!(f.width > 0.0)) throw std::invalid_argument("gaussian family: width must be > 0");
  ComplexField u(g, Space::physical);
  const double a = 0.5 / (f.width * f.width);
  for_each_index(g.dim, g.n, [&](std::size_t idx, int i, int j, int k) {
    std::array<double, 3> x{g.coord(i), g.coord(j), g.dim == 3 ? g.coord(k) : 0.0};
    double r2 = 0.0, ph = 0.0;
    for (int d = 0; d < g.dim; ++d) {
      r2 += (x[d] - f.center[d]) * (x[d] - f.center[d]);
      ph += f.modulation[d] * x[d];
    }
    u[idx] = std::exp(-a * r2) * std::polar(1.0, ph);
  });
  if (f.perturbation != 0.0) {
    // smooth seeded perturbation: random modes inside the Gaussian's own spectral radius
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd;
    ComplexField p(g, Space::frequency);
    const double kmax = 1.0 / f.width;
    for_each_index(g.dim, g.n, [&](std::size_t idx, int i, int j, int k) {
      double s = g.freq(i) * g.freq(i) + g.freq(j) * g.freq(j) + (g.dim == 3 ? g.freq(k) * g.freq(k) : 0.0);
      double re = nd(rng), im = nd(rng);
      if (s <= kmax * kmax) p[idx] = cplx{re, im};
    });
    ifft_inplace(p);
    double pm = max_abs(p);
    if (pm > 0.0)
      for (std::size_t i = 0; i < u.size(); ++i) u[i] *= 1.0 + f.perturbation * p[i] / pm;
  }
  return u;
}

/// Grid for a config: explicit box, snapshot box, or the preflight rule.
inline GridSpec resolve_grid(const SimConfig& c) {
  if (c.family == "snapshot") {
    auto s = read_snapshot(c.snapshot_path);
    if (s.field.grid.dim != c.dim || s.field.grid.n != c.n)
      throw ConfigError("snapshot " + c.snapshot_path + " does not match dim/n of the config");
    return s.field.grid;
  }
  double L = c.box ? *c.box : gaussian_box_estimate(c).required_length;
  return GridSpec::make(c.dim, c.n, L);
}

/// Builds the family member and rescales it so that ||u0||_{H^{gamma,gamma}} = eps.
inline ComplexField prepare_initial_data(const SimConfig& c, const GridSpec& g) {
  c.validate();
  ComplexField u;
  if (c.family == "snapshot") {
    auto s = read_snapshot(c.snapshot_path);
    if (!(s.field.grid == g)) throw ConfigError("snapshot grid differs from the run grid");
    u = s.field;
    if (u.space == Space::frequency) ifft_inplace(u);
  } else {
    u = gaussian_member(g, c.gaussian, c.seed);
  }
  double h = norms(u, c.gamma_value()).h_gamma_gamma();
  if (!(h > 0.0)) throw std::invalid_argument("initial data has zero norm");
  for (auto& v : u.values) v *= c.eps / h;
  return u;
}

// ---- nonlinearity ----------------------------------------------------------

struct Couplings {
  double kernel = 1.0;
  double power = 1.0;
};

/// |u|^{2/d} from |u|^2 without a pow call; exactly 0 at u = 0.
inline double power_potential(double rho, int dim) { return dim == 2 ? std::sqrt(rho) : std::cbrt(rho); }

/// V[u] = c_K (K * |u|^2) - c_P |u|^{2/d}, physical space.
inline RVector nonlinear_potential(const ComplexField& u, const KernelMultiplier& km, Couplings c = {}) {
  require_space(u, Space::physical, "nonlinear_potential");
  RVector rho(u.size());
  for (std::size_t i = 0; i < u.size(); ++i) rho[i] = std::norm(u[i]);
  RVector V(u.size(), 0.0);
  if (c.kernel != 0.0) {
    RVector conv = convolve(km, rho);
    for (std::size_t i = 0; i < V.size(); ++i) V[i] = c.kernel * conv[i];
  }
  if (c.power != 0.0)
    for (std::size_t i = 0; i < V.size(); ++i) V[i] -= c.power * power_potential(rho[i], u.grid.dim);
  return V;
}

inline RealField nonlinear_potential_field(const ComplexField& u, const KernelMultiplier& km, Couplings c = {}) {
  RealField f(u.grid, Space::physical);
  f.values = nonlinear_potential(u, km, c);
  return f;
}

struct Conserved {
  double mass = 0.0;
  double energy = 0.0;
};

/// mass = ||u||^2; energy = int |grad u|^2 + (c_K/2) int (K*|u|^2)|u|^2 - c_P d/(d+1) int |u|^{2+2/d}.
inline Conserved conserved_quantities(const ComplexField& u, const KernelMultiplier& km, Couplings c = {}) {
  require_space(u, Space::physical, "conserved_quantities");
  const auto& g = u.grid;
  Conserved q;
  RVector rho(u.size());
  double mass = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    rho[i] = std::norm(u[i]);
    mass += rho[i];
  }
  q.mass = mass * g.cell_volume();
  ComplexField uh = fft(u);
  RVector k2 = frequency_squared(g);
  double kin = 0.0;
  for (std::size_t i = 0; i < uh.size(); ++i) kin += k2[i] * std::norm(uh[i]);
  kin *= g.freq_cell_volume();
  double hartree = 0.0, pw = 0.0;
  if (c.kernel != 0.0) {
    RVector conv = convolve(km, rho);
    for (std::size_t i = 0; i < rho.size(); ++i) hartree += conv[i] * rho[i];
  }
  for (std::size_t i = 0; i < rho.size(); ++i) pw += rho[i] * power_potential(rho[i], g.dim);
  const double d = g.dim;
  q.energy = kin + g.cell_volume() * (0.5 * c.kernel * hartree - c.power * d / (d + 1.0) * pw);
  return q;
}

/// -Delta u + V[u] u, the variational derivative of the energy in u-bar.
inline ComplexField energy_gradient(const ComplexField& u, const KernelMultiplier& km, Couplings c = {}) {
  ComplexField out = apply_multiplier(u, frequency_squared(u.grid));
  RVector V = nonlinear_potential(u, km, c);
  for (std::size_t i = 0; i < u.size(); ++i) out[i] += V[i] * u[i];
  return out;
}

// ---- Strang splitting --------------------------------------------------------

/// Half free step, exact phase e^{-i dt V[u]}, half free step. Consecutive
/// half steps are fused into one full step, so a call to advance() costs one
/// raw transform pair per step plus the convolution.
class StrangStepper {
 public:
  StrangStepper(const GridSpec& g, double dt, Couplings c)
      : grid_(g), dt_(dt), couplings_(c), km_(build_multiplier(Lattice::physical(g))) {
    RVector k2 = frequency_squared(g);
    const double inv = 1.0 / static_cast<double>(g.size());
    half_.resize(g.size());
    full_.resize(g.size());
    for (std::size_t i = 0; i < k2.size(); ++i) {
      half_[i] = std::polar(inv, -0.5 * dt * k2[i]);
      full_[i] = std::polar(inv, -dt * k2[i]);
    }
  }

  [[nodiscard]] const KernelMultiplier& kernel() const { return km_; }
  [[nodiscard]] Couplings couplings() const { return couplings_; }
  [[nodiscard]] double dt() const { return dt_; }

  /// Applies `steps` Strang steps in place.
  void advance(ComplexField& u, long long steps) const {
    require_space(u, Space::physical, "StrangStepper::advance");
    if (steps <= 0) return;
    const int d = grid_.dim, n = grid_.n;
    auto& v = u.values;
    raw_dft(v.data(), d, n, -1);
    mul(v, half_);
    for (long long s = 1; s <= steps; ++s) {
      raw_dft(v.data(), d, n, +1);
      phase(u);
      raw_dft(v.data(), d, n, -1);
      mul(v, s < steps ? full_ : half_);
    }
    raw_dft(v.data(), d, n, +1);
  }

 private:
  static void mul(CVector& v, const CVector& t) {
    for (std::size_t i = 0; i < v.size(); ++i) v[i] *= t[i];
  }

  void phase(ComplexField& u) const {
    if (couplings_.kernel == 0.0 && couplings_.power == 0.0) return;
    RVector V = nonlinear_potential(u, km_, couplings_);
    for (std::size_t i = 0; i < V.size(); ++i) {
      if (!std::isfinite(V[i])) throw NumericalAbort("non-finite nonlinear potential (NaN/Inf) during stepping");
      u[i] *= std::polar(1.0, -dt_ * V[i]);
    }
  }

  GridSpec grid_;
  double dt_;
  Couplings couplings_;
  KernelMultiplier km_;
  CVector half_, full_;
};

/// One Strang step (convenience wrapper; a run uses StrangStepper directly).
inline void step_strang(ComplexField& u, double dt, Couplings c = {}) { StrangStepper(u.grid, dt, c).advance(u, 1); }

// ---- trajectories ----------------------------------------------------------

struct SeriesRow {
  double t = 0.0;
  double mass = 0.0;
  double energy = 0.0;
  double linf = 0.0;
  double sobolev = 0.0;
  double weighted = 0.0;
  double boundary_mass = 0.0;
  double spectral_tail = 0.0;
};

/// What observers see at every snapshot. `u_hat` is the scaled transform of `u`.
struct SnapshotView {
  double t = 0.0;
  long long step = 0;
  const ComplexField& u;
  const ComplexField& u_hat;
  const SeriesRow& row;
};

using Observer = std::function<void(const SnapshotView&)>;

struct RunOptions {
  std::string checkpoint_dir;       // empty: no checkpoints
  int checkpoint_every = 0;         // snapshots between checkpoints (0: none)
  std::string resume_from;          // checkpoint directory to restart from
  long long stop_after_steps = -1;  // interrupt after this many steps (testing restarts)
  // Extra state owned by observers (the phase accumulator) travels with checkpoints.
  std::function<void(const std::string&)> save_extra;
  std::function<void(const std::string&)> load_extra;
};

struct RunResult {
  SimConfig config;
  GridSpec grid;
  BoxEstimate box;
  std::vector<SeriesRow> series;
  ComplexField final_u;
  double t_final = 0.0;
  long long steps = 0;
  bool completed = false;
};

inline std::string format_series_row(const SeriesRow& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g", r.t, r.mass, r.energy, r.linf, r.sobolev,
                r.weighted, r.boundary_mass);
  return buf;
}

inline void write_series_csv(const std::string& path, const std::vector<SeriesRow>& rows) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "t,mass,energy,linf,sobolev,weighted,boundary_mass\n";
  for (const auto& r : rows) os << format_series_row(r) << '\n';
}

namespace detail {

inline void write_checkpoint(const std::string& dir, const SimConfig& c, const GridSpec& g, long long step, double t,
                             const ComplexField& u, const std::vector<SeriesRow>& series, const RunOptions& opt) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream os(dir + "/checkpoint.cfg");
    os.precision(17);
    os << "# checkpoint format 1\n" << c.echo() << "resolved_box = " << g.box_length << "\nstep = " << step
       << "\ntime = " << t << "\n";
  }
  write_snapshot(dir + "/state.sbpf", u, t);
  {
    std::ofstream os(dir + "/series.csv");
    for (const auto& r : series) {
      char buf[640];
      std::snprintf(buf, sizeof buf, "%s,%.17g\n", format_series_row(r).c_str(), r.spectral_tail);
      os << buf;
    }
  }
  if (opt.save_extra) opt.save_extra(dir);
}

}  // namespace detail

/// Integrates from t = 0 (or a checkpoint) to t_end, calling `observe` at every
/// snapshot (t = k dt stride, including t = 0). Observers run synchronously on
/// the stepping thread, which is the degenerate bounded queue: the producer
/// blocks until the consumer has handled the record, and records arrive in
/// time order.
inline RunResult run(const SimConfig& config, const Observer& observe = {}, const RunOptions& opt = {}) {
  config.validate();
  RunResult res;
  res.config = config;
  res.grid = resolve_grid(config);
  const GridSpec& g = res.grid;

  ComplexField u = prepare_initial_data(config, g);
  res.box = config.family == "snapshot" ? measured_box_estimate(u, config) : gaussian_box_estimate(config);
  if (g.box_length < res.box.required_length * (1.0 - 1e-12)) {
    std::ostringstream os;
    os << "box too small: L = " << g.box_length << " but the preflight rule needs L >= " << res.box.required_length
       << " (x0 = " << res.box.mass_radius << ", v_max = " << res.box.velocity << ", t_end = " << config.t_end << ")";
    throw NumericalAbort(os.str());
  }

  long long step = 0;
  if (!opt.resume_from.empty()) {
    auto kv = KeyValues::parse_file(opt.resume_from + "/checkpoint.cfg");
    step = kv.get_int("step");
    auto snap = read_snapshot(opt.resume_from + "/state.sbpf");
    if (!(snap.field.grid == g)) throw ConfigError("checkpoint grid does not match the config");
    u = snap.field;
    std::ifstream is(opt.resume_from + "/series.csv");
    std::string line;
    while (std::getline(is, line)) {
      SeriesRow r;
      if (std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf,%lf,%lf,%lf,%lf", &r.t, &r.mass, &r.energy, &r.linf, &r.sobolev,
                      &r.weighted, &r.boundary_mass, &r.spectral_tail) == 8)
        res.series.push_back(r);
    }
    if (opt.load_extra) opt.load_extra(opt.resume_from);
  }

  StrangStepper stepper(g, config.dt, {config.kernel_coupling, config.power_coupling});
  const double gamma = config.gamma_value();
  const long long total = config.total_steps();
  const long long stride = config.snapshot_stride;
  int snaps_since_ckpt = 0;

  auto emit = [&](long long s) {
    double t = static_cast<double>(s) * config.dt;
    for (const auto& v : u.values)
      if (!std::isfinite(v.real()) || !std::isfinite(v.imag()))
        throw NumericalAbort("non-finite field value at t = " + std::to_string(t));
    ComplexField uh = fft(u);
    SeriesRow row;
    row.t = t;
    auto q = conserved_quantities(u, stepper.kernel(), stepper.couplings());
    row.mass = q.mass;
    row.energy = q.energy;
    auto nr = norms(u, gamma);
    row.linf = nr.linf;
    row.sobolev = nr.sobolev_gamma;
    row.weighted = nr.weighted_gamma;
    row.boundary_mass = boundary_mass_fraction(u);
    row.spectral_tail = spectral_tail_fraction_of_spectrum(uh);
    res.series.push_back(row);
    if (row.boundary_mass > config.boundary_mass_max) {
      std::ostringstream os;
      os << "box too small: boundary mass fraction " << row.boundary_mass << " > " << config.boundary_mass_max
         << " at t = " << t;
      throw NumericalAbort(os.str());
    }
    if (row.spectral_tail > config.spectral_tail_max) {
      std::ostringstream os;
      os << "grid too coarse: top-octave spectral fraction " << row.spectral_tail << " > " << config.spectral_tail_max
         << " at t = " << t;
      throw NumericalAbort(os.str());
    }
    if (observe) observe(SnapshotView{t, s, u, uh, res.series.back()});
  };

  if (step == 0) emit(0);
  while (step < total) {
    long long next = std::min(total, (step / stride + 1) * stride);
    if (opt.stop_after_steps >= 0 && next > opt.stop_after_steps) break;
    stepper.advance(u, next - step);
    step = next;
    if (step % stride == 0 || step == total) {
      emit(step);
      if (!opt.checkpoint_dir.empty() && opt.checkpoint_every > 0 && ++snaps_since_ckpt >= opt.checkpoint_every) {
        snaps_since_ckpt = 0;
        detail::write_checkpoint(opt.checkpoint_dir, config, g, step, static_cast<double>(step) * config.dt, u,
                                 res.series, opt);
      }
    }
  }
  res.steps = step;
  res.t_final = static_cast<double>(step) * config.dt;
  res.completed = step == total;
  res.final_u = std::move(u);
  return res;
}

}  // namespace sbp
