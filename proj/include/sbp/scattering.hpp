#pragma once

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "sbp/dynamics.hpp"
#include "sbp/kernel.hpp"
#include "sbp/propagator.hpp"
#include "sbp/snapshot_io.hpp"
#include "sbp/spectral.hpp"

namespace sbp {

// ---- profile ---------------------------------------------------------------

struct ProfileSnapshot {
  double t = 0.0;
  ComplexField f_hat;  // e^{it|xi|^2} u_hat
};

/// f_hat(t) = e^{it|xi|^2} u_hat(t), computed in frequency space. Accepts u in
/// either space.
inline ProfileSnapshot profile(const ComplexField& u, double t) {
  ProfileSnapshot p;
  p.t = t;
  p.f_hat = u.space == Space::frequency ? u : fft(u);
  RVector k2 = frequency_squared(u.grid);
  for (std::size_t i = 0; i < k2.size(); ++i) p.f_hat[i] *= std::polar(1.0, t * k2[i]);
  return p;
}

/// Inverse of the profile map: u(t) = F^{-1}[e^{-it|xi|^2} f_hat].
inline ComplexField profile_inverse(const ComplexField& f_hat, double t) {
  require_space(f_hat, Space::frequency, "profile_inverse");
  ComplexField uh = f_hat;
  RVector k2 = frequency_squared(f_hat.grid);
  for (std::size_t i = 0; i < k2.size(); ++i) uh[i] *= std::polar(1.0, -t * k2[i]);
  return ifft(uh);
}

// ---- nonlinear terms on the frequency grid ---------------------------------

inline KernelMultiplier frequency_multiplier(const GridSpec& g, double t) {
  return build_multiplier(Lattice::frequency(g), t, MultiplierMode::sampled, 2, ZeroModePolicy::sampled_box,
                          OriginSample::cell_average);
}

/// Kernels K_s acting on the frequency variable (grid spacing dxi).
class FrequencyKernels {
 public:
  explicit FrequencyKernels(const GridSpec& g) : grid_(g), K_(frequency_multiplier(g, 0.5)) {}

  [[nodiscard]] const KernelMultiplier& K() const { return K_; }

  /// K_t with K_t(x) = (1 - e^{-2t|x|})/|x|; cached for the last t requested.
  const KernelMultiplier& K_t(double t) {
    if (!Kt_ || Kt_->t != t) Kt_ = frequency_multiplier(grid_, t);
    return *Kt_;
  }

  [[nodiscard]] const GridSpec& grid() const { return grid_; }

 private:
  GridSpec grid_;
  KernelMultiplier K_;
  std::optional<KernelMultiplier> Kt_;
};

inline RVector density(const ComplexField& f) {
  RVector r(f.size());
  for (std::size_t i = 0; i < f.size(); ++i) r[i] = std::norm(f[i]);
  return r;
}

/// c_K (K * |f|^2) - c_P |f|^{2/d} for f in frequency space (DFT order).
inline RVector frequency_potential(const ComplexField& f_hat, const KernelMultiplier& K, Couplings c = {}) {
  require_space(f_hat, Space::frequency, "frequency_potential");
  RVector rho = density(f_hat);
  RVector V(rho.size(), 0.0);
  if (c.kernel != 0.0) {
    RVector conv = convolve_dft_ordered(K, rho);
    for (std::size_t i = 0; i < V.size(); ++i) V[i] = c.kernel * conv[i];
  }
  if (c.power != 0.0)
    for (std::size_t i = 0; i < V.size(); ++i) V[i] -= c.power * power_potential(rho[i], f_hat.grid.dim);
  return V;
}

/// F M(t) F^{-1} on a frequency field.
inline ComplexField gauge_in_frequency(const ComplexField& f_hat, double t, int sign) {
  require_space(f_hat, Space::frequency, "gauge_in_frequency");
  return fft(gauge_M(ifft(f_hat), t, sign));
}

/// F (M(t)^{-1} - 1) F^{-1}, with e^{-ia} - 1 = -2i sin(a/2) e^{-ia/2} to keep
/// small phases accurate.
inline ComplexField gauge_defect(const ComplexField& f_hat, double t) {
  require_space(f_hat, Space::frequency, "gauge_defect");
  ComplexField v = ifft(f_hat);
  RVector r2 = radius_squared(v.grid);
  for (std::size_t i = 0; i < r2.size(); ++i) {
    double a = r2[i] / (4.0 * t);
    v[i] *= cplx{0.0, -2.0 * std::sin(0.5 * a)} * std::polar(1.0, -0.5 * a);
  }
  return fft(v);
}

struct RhsTerms {
  double t = 0.0;
  ComplexField kernel_term;  // c_K (K * |f|^2) f
  ComplexField power_term;   // c_P |f|^{2/d} f
  ComplexField I1, I2, I3, I4;
  double I2_rearranged_deviation = 0.0;  // relative sup distance between the two forms of I2

  [[nodiscard]] std::array<double, 4> sup_norms() const {
    return {max_abs(I1), max_abs(I2), max_abs(I3), max_abs(I4)};
  }

  /// (2t)^{-1} [kernel - power + I1 + I2 - I3 - I4]
  [[nodiscard]] ComplexField total() const {
    ComplexField r(kernel_term.grid, Space::frequency);
    const double s = 0.5 / t;
    for (std::size_t i = 0; i < r.size(); ++i)
      r[i] = s * (kernel_term[i] - power_term[i] + I1[i] + I2[i] - I3[i] - I4[i]);
    return r;
  }
};

/// The four remainder terms of the profile equation at time t, with
/// a = F M f, A = c_K (K_t * |a|^2) a and P = c_P |a|^{2/d} a:
///   I1 = F(M^{-1} - 1)F^{-1} A,   I2 = A - c_K (K * |f|^2) f,
///   I3 = F(M^{-1} - 1)F^{-1} P,   I4 = P - c_P |f|^{2/d} f.
inline RhsTerms rhs_terms(const ComplexField& f_hat, double t, FrequencyKernels& ker, Couplings c = {}) {
  require_space(f_hat, Space::frequency, "rhs_terms");
  if (!(t > 0.0)) throw std::invalid_argument("rhs_terms: t must be positive");
  const auto& g = f_hat.grid;
  const int d = g.dim;
  RhsTerms r;
  r.t = t;
  ComplexField a = gauge_in_frequency(f_hat, t, +1);
  RVector rho_a = density(a), rho_f = density(f_hat);
  const KernelMultiplier& Kt = ker.K_t(t);
  RVector Kt_a = convolve_dft_ordered(Kt, rho_a);
  RVector K_f = convolve_dft_ordered(ker.K(), rho_f);

  ComplexField A(g, Space::frequency), P(g, Space::frequency);
  r.kernel_term = ComplexField(g, Space::frequency);
  r.power_term = ComplexField(g, Space::frequency);
  for (std::size_t i = 0; i < a.size(); ++i) {
    A[i] = c.kernel * Kt_a[i] * a[i];
    P[i] = c.power * power_potential(rho_a[i], d) * a[i];
    r.kernel_term[i] = c.kernel * K_f[i] * f_hat[i];
    r.power_term[i] = c.power * power_potential(rho_f[i], d) * f_hat[i];
  }
  r.I1 = gauge_defect(A, t);
  r.I3 = gauge_defect(P, t);
  r.I2 = ComplexField(g, Space::frequency);
  r.I4 = ComplexField(g, Space::frequency);
  for (std::size_t i = 0; i < a.size(); ++i) {
    r.I2[i] = A[i] - r.kernel_term[i];
    r.I4[i] = P[i] - r.power_term[i];
  }

  // I2 again, expanded around delta = a - f:
  // (K_t*|a|^2) delta + (K_t*(2 Re(delta conj f) + |delta|^2)) f + ((K_t - K)*|f|^2) f
  RVector cross(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    cplx delta = a[i] - f_hat[i];
    cross[i] = 2.0 * (delta * std::conj(f_hat[i])).real() + std::norm(delta);
  }
  RVector Kt_cross = convolve_dft_ordered(Kt, cross);
  RVector Kt_f = convolve_dft_ordered(Kt, rho_f);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    cplx delta = a[i] - f_hat[i];
    cplx alt = c.kernel * (Kt_a[i] * delta + Kt_cross[i] * f_hat[i] + (Kt_f[i] - K_f[i]) * f_hat[i]);
    num = std::max(num, std::abs(alt - r.I2[i]));
    den = std::max(den, std::abs(r.I2[i]));
  }
  r.I2_rearranged_deviation = den > 0.0 ? num / den : num;
  return r;
}

inline RhsTerms rhs_terms(const ComplexField& f_hat, double t, Couplings c = {}) {
  FrequencyKernels ker(f_hat.grid);
  return rhs_terms(f_hat, t, ker, c);
}

/// (2t)^{-1} F M^{-1} F^{-1}[A - P]: the right-hand side of the profile
/// equation without the I-split. Equal to RhsTerms::total() identically.
inline ComplexField profile_rhs(const ComplexField& f_hat, double t, FrequencyKernels& ker, Couplings c = {}) {
  ComplexField a = gauge_in_frequency(f_hat, t, +1);
  RVector rho = density(a);
  RVector conv = convolve_dft_ordered(ker.K_t(t), rho);
  ComplexField b(a.grid, Space::frequency);
  for (std::size_t i = 0; i < a.size(); ++i)
    b[i] = (c.kernel * conv[i] - c.power * power_potential(rho[i], a.grid.dim)) * a[i];
  ComplexField out = gauge_in_frequency(b, t, -1);
  for (auto& v : out.values) v *= 0.5 / t;
  return out;
}

struct ResidualReport {
  double t = 0.0;
  double spacing = 0.0;
  double residual = 0.0;      // sup |i d_t f - rhs|
  double largest_term = 0.0;  // largest sup norm among the retained terms
  std::array<double, 6> term_norms{};  // (2t)^{-1} x {kernel, power, I1, I2, I3, I4}
};

/// Centered-difference residual of the profile equation from three snapshots
/// at t - delta, t, t + delta.
inline ResidualReport profile_ode_residual(const std::vector<ProfileSnapshot>& snaps, FrequencyKernels& ker,
                                           Couplings c = {}) {
  if (snaps.size() < 3) throw std::invalid_argument("profile_ode_residual: needs three snapshots");
  const auto& m = snaps[0];
  const auto& z = snaps[1];
  const auto& p = snaps[2];
  double dl = z.t - m.t, dr = p.t - z.t;
  if (!(dl > 0.0) || std::abs(dl - dr) > 1e-9 * std::max(1.0, z.t))
    throw std::invalid_argument("profile_ode_residual: snapshots must be equally spaced and increasing");
  ResidualReport r;
  r.t = z.t;
  r.spacing = dl;
  RhsTerms terms = rhs_terms(z.f_hat, z.t, ker, c);
  ComplexField rhs = terms.total();
  for (std::size_t i = 0; i < rhs.size(); ++i) {
    cplx dt = (p.f_hat[i] - m.f_hat[i]) / (2.0 * dl);
    r.residual = std::max(r.residual, std::abs(cplx{0.0, 1.0} * dt - rhs[i]));
  }
  const double s = 0.5 / z.t;
  auto in = terms.sup_norms();
  r.term_norms = {s * max_abs(terms.kernel_term), s * max_abs(terms.power_term), s * in[0], s * in[1], s * in[2],
                  s * in[3]};
  r.largest_term = *std::max_element(r.term_norms.begin(), r.term_norms.end());
  return r;
}

// ---- bootstrap norms -------------------------------------------------------

struct DiagnosticsRecord {
  double t = 0.0;
  double D = 0.0;  // ||f_hat||_inf
  double E = 0.0;  // t^{-eps^2} (||<grad>^gamma u|| + |||J|^gamma u||)
  double X = 0.0;  // running sup of D + E
  std::array<double, 4> I{};  // sup norms of I1..I4 (NaN when not computed)
  double linf_u = 0.0;
  double bridge = 0.0;        // ||u||_inf t^{d/2} / (D + E)
  double g_dyadic = std::numeric_limits<double>::quiet_NaN();  // ||g(t) - g(t/2)||_inf
  double f_dyadic = std::numeric_limits<double>::quiet_NaN();  // ||f(t) - f(t/2)||_inf
};

/// D and E at time t (X and I are filled by the tracker).
inline DiagnosticsRecord bootstrap_norms(const ComplexField& u, double t, double eps, double gamma) {
  require_space(u, Space::physical, "bootstrap_norms");
  if (t < 1.0) throw std::invalid_argument("bootstrap_norms: t must be >= 1");
  DiagnosticsRecord r;
  r.t = t;
  ProfileSnapshot p = profile(u, t);
  r.D = max_abs(p.f_hat);
  double sob = spectral_weighted_l2(fft(u), fractional_table(u.grid, gamma, FracKind::bessel));
  r.E = std::pow(t, -eps * eps) * (sob + J_power_norm(u, t, gamma));
  r.X = r.D + r.E;
  r.linf_u = max_abs(u);
  r.bridge = r.linf_u * std::pow(t, 0.5 * u.grid.dim) / (r.D + r.E);
  r.I.fill(std::numeric_limits<double>::quiet_NaN());
  return r;
}

// ---- phase accumulator -----------------------------------------------------

/// Theta(t) = int_1^t s^{-1} V_f(s) ds with V_f = c_K K*|f|^2 - c_P |f|^{2/d},
/// trapezoidal in log s. Only state that must be reduced in time order.
struct PhaseAccumulator {
  GridSpec grid;
  RVector theta;      // DFT-ordered frequency field
  RVector last_v;     // V_f at last_t
  double last_t = 0.0;
  bool started = false;

  PhaseAccumulator() = default;
  explicit PhaseAccumulator(const GridSpec& g) : grid(g), theta(g.size(), 0.0) {}

  void add(double t, RVector v) {
    if (!started) {
      if (std::abs(t - 1.0) > 1e-9) throw std::invalid_argument("phase accumulator must start at t = 1");
      started = true;
      t = 1.0;
    } else {
      if (!(t > last_t)) throw std::invalid_argument("phase accumulator: non-monotone snapshot times");
      const double w = 0.5 * (std::log(t) - std::log(last_t));
      for (std::size_t i = 0; i < theta.size(); ++i) theta[i] += w * (last_v[i] + v[i]);
    }
    last_t = t;
    last_v = std::move(v);
  }
};

/// g = e^{i Theta/2} f_hat.
inline ComplexField corrected_profile(const ComplexField& f_hat, const RVector& theta) {
  require_space(f_hat, Space::frequency, "corrected_profile");
  if (theta.size() != f_hat.size()) throw std::invalid_argument("corrected_profile: size mismatch");
  ComplexField g = f_hat;
  for (std::size_t i = 0; i < g.size(); ++i) g[i] *= std::polar(1.0, 0.5 * theta[i]);
  return g;
}

// ---- decay fit -------------------------------------------------------------

struct DecayFit {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_stderr = 0.0;
  double band_lo = 0.0;  // 95% confidence band on the slope
  double band_hi = 0.0;
  std::size_t points = 0;
};

/// Least-squares line through (log t, log y).
inline DecayFit decay_fit(const std::vector<std::pair<double, double>>& series, std::size_t min_points = 8,
                          double min_span = 10.0) {
  if (series.size() < min_points)
    throw std::invalid_argument("decay_fit: need at least " + std::to_string(min_points) + " points");
  double tmin = std::numeric_limits<double>::infinity(), tmax = 0.0;
  for (auto& [t, y] : series) {
    if (t < 1.0) throw std::invalid_argument("decay_fit: times must be >= 1");
    if (!(y > 0.0) || !std::isfinite(y)) throw std::invalid_argument("decay_fit: values must be positive and finite");
    tmin = std::min(tmin, t);
    tmax = std::max(tmax, t);
  }
  if (tmax < min_span * tmin * (1.0 - 1e-12)) throw std::invalid_argument("decay_fit: times must span a decade");
  const double n = static_cast<double>(series.size());
  double mx = 0.0, my = 0.0;
  for (auto& [t, y] : series) {
    mx += std::log(t);
    my += std::log(y);
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0;
  for (auto& [t, y] : series) {
    double dx = std::log(t) - mx;
    sxx += dx * dx;
    sxy += dx * (std::log(y) - my);
  }
  DecayFit f;
  f.points = series.size();
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double sse = 0.0;
  for (auto& [t, y] : series) {
    double e = std::log(y) - f.intercept - f.slope * std::log(t);
    sse += e * e;
  }
  f.slope_stderr = n > 2 ? std::sqrt(sse / (n - 2.0) / sxx) : 0.0;
  double q = n > 2 ? boost::math::quantile(boost::math::students_t(n - 2.0), 0.975) : 0.0;
  f.band_lo = f.slope - q * f.slope_stderr;
  f.band_hi = f.slope + q * f.slope_stderr;
  return f;
}

// ---- tracker ---------------------------------------------------------------

struct TrackerOptions {
  double eps = 0.1;
  double gamma = 1.5;
  Couplings couplings;
  std::vector<double> keep_times;  // snapshots of f_hat, g, u and Theta retained at these times
  int rhs_every = 0;               // compute I1..I4 every k-th diagnostic snapshot (0: never)
  bool j_norm = true;              // E-norm needs |J|^gamma; costly on large grids
};

struct KeptSnapshot {
  double t = 0.0;
  ComplexField u;
  ComplexField f_hat;
  ComplexField g;
  RVector theta;
};

/// Consumes run snapshots (t >= 1) in time order; never touches the run state.
class ScatteringTracker {
 public:
  ScatteringTracker(const GridSpec& g, TrackerOptions opt) : grid_(g), opt_(std::move(opt)), ker_(g), phase_(g) {}

  void observe(const SnapshotView& s) {
    if (s.t < 1.0 - 1e-9) return;
    const double t = s.t;
    ProfileSnapshot p = profile(s.u_hat, t);
    phase_.add(t, frequency_potential(p.f_hat, ker_.K(), opt_.couplings));

    DiagnosticsRecord r;
    r.t = t;
    r.D = max_abs(p.f_hat);
    double sob = spectral_weighted_l2(s.u_hat, fractional_table(grid_, opt_.gamma, FracKind::bessel));
    double jn = opt_.j_norm ? J_power_norm(s.u, t, opt_.gamma) : 0.0;
    r.E = std::pow(t, -opt_.eps * opt_.eps) * (sob + jn);
    running_sup_ = std::max(running_sup_, r.D + r.E);
    r.X = running_sup_;
    r.linf_u = s.row.linf;
    r.bridge = r.linf_u * std::pow(t, 0.5 * grid_.dim) / (r.D + r.E);
    r.I.fill(std::numeric_limits<double>::quiet_NaN());
    if (opt_.rhs_every > 0 && count_ % opt_.rhs_every == 0) r.I = rhs_terms(p.f_hat, t, ker_, opt_.couplings).sup_norms();
    ++count_;

    ComplexField g = corrected_profile(p.f_hat, phase_.theta);
    if (is_kept(t)) {
      auto half = find_kept(0.5 * t);
      if (half) {
        r.g_dyadic = max_abs_diff(g, half->g);
        r.f_dyadic = max_abs_diff(p.f_hat, half->f_hat);
      }
      kept_.push_back({t, s.u, p.f_hat, g, phase_.theta});
    }
    last_g_ = std::move(g);
    last_t_ = t;
    records_.push_back(r);
  }

  [[nodiscard]] const std::vector<DiagnosticsRecord>& records() const { return records_; }
  [[nodiscard]] const std::vector<KeptSnapshot>& kept() const { return kept_; }
  [[nodiscard]] const PhaseAccumulator& phase() const { return phase_; }
  [[nodiscard]] const ComplexField& last_g() const { return last_g_; }
  [[nodiscard]] double last_t() const { return last_t_; }
  [[nodiscard]] const GridSpec& grid() const { return grid_; }
  [[nodiscard]] const TrackerOptions& options() const { return opt_; }
  FrequencyKernels& kernels() { return ker_; }

  [[nodiscard]] const KeptSnapshot* find_kept(double t) const {
    for (const auto& k : kept_)
      if (std::abs(k.t - t) <= 1e-9 * std::max(1.0, t)) return &k;
    return nullptr;
  }

  void write_csv(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << "t,D,E,X,I1,I2,I3,I4,linf_u,bridge,g_dyadic,f_dyadic\n";
    for (const auto& r : records_) os << format_record(r) << '\n';
  }

  // checkpoint support: the accumulator and retained snapshots travel with the run state
  void save(const std::string& dir) const {
    std::filesystem::create_directories(dir);
    write_real(dir + "/theta.sbpf", phase_.theta, phase_.last_t);
    write_real(dir + "/theta_last_v.sbpf", phase_.last_v.empty() ? RVector(grid_.size(), 0.0) : phase_.last_v,
               phase_.last_t);
    {
      std::ofstream os(dir + "/tracker.txt");
      char buf[128];
      std::snprintf(buf, sizeof buf, "%d %d %.17g %.17g %zu\n", phase_.started ? 1 : 0, count_, running_sup_, last_t_,
                    kept_.size());
      os << buf;
      for (const auto& r : records_) os << format_record(r) << '\n';
    }
    for (std::size_t i = 0; i < kept_.size(); ++i) {
      std::string b = dir + "/kept" + std::to_string(i);
      write_snapshot(b + "_u.sbpf", kept_[i].u, kept_[i].t);
      write_snapshot(b + "_f.sbpf", kept_[i].f_hat, kept_[i].t);
      write_snapshot(b + "_g.sbpf", kept_[i].g, kept_[i].t);
      write_real(b + "_theta.sbpf", kept_[i].theta, kept_[i].t);
    }
    if (!last_g_.values.empty()) write_snapshot(dir + "/last_g.sbpf", last_g_, last_t_);
  }

  void load(const std::string& dir) {
    auto th = read_snapshot(dir + "/theta.sbpf");
    phase_.theta = real_part(th.field);
    phase_.last_v = real_part(read_snapshot(dir + "/theta_last_v.sbpf").field);
    phase_.last_t = th.time;
    std::ifstream is(dir + "/tracker.txt");
    int started = 0;
    std::size_t nkept = 0;
    is >> started >> count_ >> running_sup_ >> last_t_ >> nkept;
    phase_.started = started != 0;
    if (!phase_.started) phase_.last_v.clear();
    records_.clear();
    std::string line;
    std::getline(is, line);
    while (std::getline(is, line)) {
      DiagnosticsRecord r;
      if (parse_record(line, r)) records_.push_back(r);
    }
    kept_.clear();
    for (std::size_t i = 0; i < nkept; ++i) {
      std::string b = dir + "/kept" + std::to_string(i);
      KeptSnapshot k;
      auto u = read_snapshot(b + "_u.sbpf");
      k.t = u.time;
      k.u = u.field;
      k.f_hat = read_snapshot(b + "_f.sbpf").field;
      k.g = read_snapshot(b + "_g.sbpf").field;
      k.theta = real_part(read_snapshot(b + "_theta.sbpf").field);
      kept_.push_back(std::move(k));
    }
    if (std::filesystem::exists(dir + "/last_g.sbpf")) last_g_ = read_snapshot(dir + "/last_g.sbpf").field;
  }

 private:
  [[nodiscard]] bool is_kept(double t) const {
    for (double k : opt_.keep_times)
      if (std::abs(k - t) <= 1e-9 * std::max(1.0, t)) return true;
    return false;
  }

  static std::string format_record(const DiagnosticsRecord& r) {
    char buf[640];
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g", r.t, r.D,
                  r.E, r.X, r.I[0], r.I[1], r.I[2], r.I[3], r.linf_u, r.bridge, r.g_dyadic, r.f_dyadic);
    return buf;
  }

  static bool parse_record(const std::string& line, DiagnosticsRecord& r) {
    std::vector<double> v;
    std::size_t pos = 0;
    while (pos <= line.size()) {
      auto comma = line.find(',', pos);
      std::string item = line.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
      v.push_back(std::strtod(item.c_str(), nullptr));
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    if (v.size() != 12) return false;
    r = {v[0], v[1], v[2], v[3], {v[4], v[5], v[6], v[7]}, v[8], v[9], v[10], v[11]};
    return true;
  }

  void write_real(const std::string& path, const RVector& v, double t) const {
    ComplexField f(grid_, Space::frequency);
    for (std::size_t i = 0; i < v.size(); ++i) f[i] = v[i];
    write_snapshot(path, f, t);
  }

  static RVector real_part(const ComplexField& f) {
    RVector r(f.size());
    for (std::size_t i = 0; i < f.size(); ++i) r[i] = f[i].real();
    return r;
  }

  GridSpec grid_;
  TrackerOptions opt_;
  FrequencyKernels ker_;
  PhaseAccumulator phase_;
  std::vector<DiagnosticsRecord> records_;
  std::vector<KeptSnapshot> kept_;
  ComplexField last_g_;
  double last_t_ = 0.0;
  double running_sup_ = 0.0;
  int count_ = 0;
};

/// Dyadic times 2^k in [1, t_end] together with t_end/4, t_end/2, t_end.
inline std::vector<double> default_keep_times(double t_end) {
  std::vector<double> k;
  for (double t = 1.0; t <= t_end * (1.0 + 1e-12); t *= 2.0) k.push_back(t);
  for (double t : {0.25 * t_end, 0.5 * t_end, t_end})
    if (t >= 1.0 && std::find_if(k.begin(), k.end(), [&](double x) { return std::abs(x - t) < 1e-9 * t; }) == k.end())
      k.push_back(t);
  std::sort(k.begin(), k.end());
  return k;
}

// ---- scattering state ------------------------------------------------------

struct WConvergenceRow {
  double t = 0.0;
  double distance = 0.0;  // ||g(t) - W0||_inf
};

struct WExtraction {
  double t_end = 0.0;
  ComplexField W0;
  ComplexField W;
  RVector phi_inf;
  std::vector<WConvergenceRow> table;
  double fitted_exponent = std::numeric_limits<double>::quiet_NaN();
  bool cauchy = true;        // dyadic differences of g decrease
  double aitken_fallbacks = 0.0;  // fraction of points where Aitken was not applicable
};

/// W0 = g(t_end); Phi = Theta/2 - (1/2) N(W0) log t with N(W0) = c_K K*|W0|^2 - c_P |W0|^{2/d};
/// Phi_inf by pointwise Aitken extrapolation of Phi at t_end/4, t_end/2, t_end; W = e^{-i Phi_inf} W0.
inline WExtraction extract_W(ScatteringTracker& tr) {
  const double te = tr.last_t();
  if (te < 16.0 - 1e-9) throw std::invalid_argument("extract_W: run must reach t_end >= 16");
  const KeptSnapshot* k3 = tr.find_kept(te);
  const KeptSnapshot* k2 = tr.find_kept(0.5 * te);
  const KeptSnapshot* k1 = tr.find_kept(0.25 * te);
  if (!k1 || !k2 || !k3) throw std::invalid_argument("extract_W: tracker must keep t_end/4, t_end/2 and t_end");
  WExtraction w;
  w.t_end = te;
  w.W0 = k3->g;
  RVector N = frequency_potential(w.W0, tr.kernels().K(), tr.options().couplings);
  auto phi = [&](const KeptSnapshot* k, std::size_t i) { return 0.5 * k->theta[i] - 0.5 * N[i] * std::log(k->t); };
  w.phi_inf.resize(N.size());
  std::size_t fallback = 0;
  for (std::size_t i = 0; i < N.size(); ++i) {
    double p1 = phi(k1, i), p2 = phi(k2, i), p3 = phi(k3, i);
    double d1 = p2 - p1, d2 = p3 - p2, den = d2 - d1;
    if (std::abs(den) > 1e-14 * (std::abs(p3) + 1e-300) && std::abs(d2) < std::abs(d1)) {
      w.phi_inf[i] = p3 - d2 * d2 / den;
    } else {
      w.phi_inf[i] = p3;
      ++fallback;
    }
  }
  w.aitken_fallbacks = static_cast<double>(fallback) / static_cast<double>(N.size());
  w.W = w.W0;
  for (std::size_t i = 0; i < w.W.size(); ++i) w.W[i] *= std::polar(1.0, -w.phi_inf[i]);

  std::vector<std::pair<double, double>> fit;
  double prev = std::numeric_limits<double>::infinity();
  for (const auto& k : tr.kept()) {
    if (k.t >= te * (1.0 - 1e-12)) continue;
    if (std::abs(std::log2(k.t) - std::round(std::log2(k.t))) > 1e-9) continue;
    double dist = max_abs_diff(k.g, w.W0);
    w.table.push_back({k.t, dist});
    if (dist > 0.0) fit.emplace_back(k.t, dist);
  }
  for (const auto& r : tr.records())
    if (std::isfinite(r.g_dyadic)) {
      if (!(r.g_dyadic < prev)) w.cauchy = false;
      prev = r.g_dyadic;
    }
  if (fit.size() >= 2) w.fitted_exponent = decay_fit(fit, 2, 1.0).slope;
  return w;
}

/// u_approx(t, x) = (2it)^{-d/2} e^{i|x|^2/4t} exp(-(i/2) N(W)(x/2t) log t) W(x/2t).
inline ComplexField asymptotic_field(const ComplexField& W, double t, const KernelMultiplier& K, Couplings c = {}) {
  require_space(W, Space::frequency, "asymptotic_field");
  if (t < 1.0) throw std::invalid_argument("asymptotic_field: t must be >= 1");
  RVector N = frequency_potential(W, K, c);
  ComplexField h = W;
  const double lt = std::log(t);
  for (std::size_t i = 0; i < h.size(); ++i) h[i] *= std::polar(1.0, -0.5 * N[i] * lt);
  ResampleOptions opt{OutOfBox::zero, 1e-6};
  return gauge_M(dilation_D_of_spectrum(h, t, opt), t, +1);
}

/// t^{d/2} ||u - u_approx||_inf
inline double asymptotic_deviation(const ComplexField& u, const ComplexField& approx, double t) {
  return std::pow(t, 0.5 * u.grid.dim) * max_abs_diff(u, approx);
}

}  // namespace sbp
