#pragma once

#include <boost/math/quadrature/gauss.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sbp/fft.hpp"
#include "sbp/field.hpp"
#include "sbp/grid.hpp"

namespace sbp {

/// K(r) = (1 - e^{-r}) / r, with K(0) = 1.
inline double kernel_value(double r) {
  r = std::abs(r);
  if (r < 1e-8) return 1.0 - 0.5 * r;
  return -std::expm1(-r) / r;
}

inline double kernel_value(const std::array<double, 3>& x) {
  return kernel_value(std::sqrt(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]));
}

/// K_t(r) = (1 - e^{-2tr}) / r = 2t K(2tr), with K_t(0) = 2t.
inline double kernel_t_value(double r, double t) {
  if (!(t > 0.0)) throw std::invalid_argument("kernel_t_value: t must be positive");
  return 2.0 * t * kernel_value(2.0 * t * std::abs(r));
}

inline double kernel_t_value(const std::array<double, 3>& x, double t) {
  return kernel_t_value(std::sqrt(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]), t);
}

/// Closed-form unitary transform of K as a function of |xi| > 0.
inline double kernel_multiplier_analytic(int dim, double xi) {
  if (!(xi > 0.0)) throw std::domain_error("analytic kernel multiplier is singular at xi = 0");
  if (dim == 3) return std::sqrt(2.0 / pi) / (xi * xi * (1.0 + xi * xi));
  double s = std::sqrt(1.0 + xi * xi);
  // 1/xi - 1/s written without cancellation
  return 1.0 / (xi * s * (s + xi));
}

/// Transform of K_t: (2t)^{1-d} m(xi / 2t).
inline double kernel_t_multiplier_analytic(int dim, double xi, double t) {
  return std::pow(2.0 * t, 1.0 - dim) * kernel_multiplier_analytic(dim, xi / (2.0 * t));
}

enum class MultiplierMode { sampled, analytic };
enum class ZeroModePolicy { sampled_box, reject };
// point: K_t(0) = 2t at the origin cell; cell_average: the mean of K_t over the
// origin cell, which stays accurate once 2t h is not small (K_t -> 1/|x|).
enum class OriginSample { point, cell_average };

/// Mean of K_t over the cube [-h/2, h/2]^d. Each face cone is integrated
/// radially in closed form and over the face by Gauss-Legendre.
inline double kernel_t_cell_average(int dim, double h, double t) {
  if (!(h > 0.0) || !(t > 0.0)) throw std::invalid_argument("kernel_t_cell_average: h and t must be positive");
  const double a = 0.5 * h, s = 2.0 * t;
  using gl = boost::math::quadrature::gauss<double, 30>;
  if (dim == 2) {
    // int_0^R K_t(r) r dr
    auto G = [&](double R) { return R + std::expm1(-s * R) / s; };
    double face = gl::integrate([&](double y) {
      double r2 = a * a + y * y;
      return a / r2 * G(std::sqrt(r2));
    }, -a, a);
    return 4.0 * face / (h * h);
  }
  if (dim == 3) {
    // int_0^R K_t(r) r^2 dr
    auto G = [&](double R) { return 0.5 * R * R - (1.0 - std::exp(-s * R) * (1.0 + s * R)) / (s * s); };
    double face = gl::integrate([&](double y) {
      return gl::integrate([&](double z) {
        double r2 = a * a + y * y + z * z;
        double r = std::sqrt(r2);
        return a / (r2 * r) * G(r);
      }, -a, a);
    }, -a, a);
    return 6.0 * face / (h * h * h);
  }
  throw std::invalid_argument("kernel_t_cell_average: dim must be 2 or 3");
}

/// Fourier representation of K_t (t = 1/2 gives K) for linear convolution of
/// data living on `lattice`. The data is embedded in a box pad_factor times
/// larger, so with pad_factor >= 2 the periodic convolution on the padded box
/// equals the linear convolution of the sampled data.
struct KernelMultiplier {
  Lattice lattice;
  MultiplierMode mode = MultiplierMode::sampled;
  int pad_factor = 2;
  double t = 0.5;
  int m = 0;          // padded points per axis
  RVector table;      // m(xi) on the r2c half spectrum of the padded lattice

  [[nodiscard]] double padded_dxi() const { return 2.0 * pi / (m * lattice.spacing); }
  [[nodiscard]] double xi_max() const { return pi / lattice.spacing; }

  /// Wave vector magnitude for a half-spectrum index.
  [[nodiscard]] double xi_of(std::size_t idx) const {
    const int hm = m / 2 + 1;
    int last = static_cast<int>(idx % static_cast<std::size_t>(hm));
    std::size_t rest = idx / static_cast<std::size_t>(hm);
    double s = static_cast<double>(last) * last;
    for (int a = lattice.dim - 2; a >= 0; --a) {
      int k = static_cast<int>(rest % static_cast<std::size_t>(m));
      rest /= static_cast<std::size_t>(m);
      int kk = k < m / 2 ? k : k - m;
      s += static_cast<double>(kk) * kk;
    }
    return std::sqrt(s) * padded_dxi();
  }
};

namespace detail {

inline std::size_t ipow(int n, int d) {
  std::size_t s = 1;
  for (int a = 0; a < d; ++a) s *= static_cast<std::size_t>(n);
  return s;
}

// K_t sampled at the displacements of the padded lattice in DFT order.
// Index m/2 uses +m/2 so the sample stays even and its DFT stays real.
inline RVector sampled_kernel(int dim, int m, double s, double t) {
  RVector k(ipow(m, dim));
  auto disp = [&](int i) { return (i <= m / 2 ? i : i - m) * s; };
  for_each_index(dim, m, [&](std::size_t idx, int i, int j, int l) {
    double x = disp(i), y = disp(j), z = dim == 3 ? disp(l) : 0.0;
    k[idx] = kernel_t_value(std::sqrt(x * x + y * y + z * z), t);
  });
  return k;
}

}  // namespace detail

inline KernelMultiplier build_multiplier(const Lattice& lat, double t = 0.5,
                                         MultiplierMode mode = MultiplierMode::sampled, int pad_factor = 2,
                                         ZeroModePolicy zero_mode = ZeroModePolicy::sampled_box,
                                         OriginSample origin = OriginSample::point) {
  if (lat.dim != 2 && lat.dim != 3) throw std::invalid_argument("build_multiplier: dim must be 2 or 3");
  if (pad_factor < 1) throw std::invalid_argument("build_multiplier: pad_factor must be >= 1");
  if (!(t > 0.0)) throw std::invalid_argument("build_multiplier: t must be positive");
  KernelMultiplier km;
  km.lattice = lat;
  km.mode = mode;
  km.pad_factor = pad_factor;
  km.t = t;
  km.m = lat.n * pad_factor;
  const int d = lat.dim;
  const double norm = std::pow(lat.spacing, d) * std::pow(2.0 * pi, -0.5 * d);

  RVector samples = detail::sampled_kernel(d, km.m, lat.spacing, t);
  if (origin == OriginSample::cell_average) samples[0] = kernel_t_cell_average(d, lat.spacing, t);
  double zero = 0.0;
  for (double v : samples) zero += v;
  zero *= norm;

  km.table.assign(half_spectrum_size(d, km.m), 0.0);
  if (mode == MultiplierMode::sampled) {
    CVector spec(km.table.size());
    raw_r2c(samples.data(), spec.data(), d, km.m);
    for (std::size_t i = 0; i < spec.size(); ++i) km.table[i] = spec[i].real() * norm;
  } else {
    if (zero_mode == ZeroModePolicy::reject)
      throw std::domain_error("analytic multiplier needs a zero-mode policy (xi = 0 is singular)");
    for (std::size_t i = 0; i < km.table.size(); ++i) {
      double xi = km.xi_of(i);
      km.table[i] = i == 0 ? zero : kernel_t_multiplier_analytic(d, xi, t);
    }
  }
  return km;
}

/// (K_t * rho)(x_i) = sum_j K_t(x_i - x_j) rho_j h^d for real data in centered
/// row-major order on the multiplier's lattice.
inline RVector convolve(const KernelMultiplier& km, const RVector& rho) {
  const int d = km.lattice.dim, n = km.lattice.n, m = km.m;
  if (rho.size() != km.lattice.size()) throw std::invalid_argument("convolve: density size does not match lattice");
  RVector pad(detail::ipow(m, d), 0.0);
  if (d == 2) {
    for (int i = 0; i < n; ++i)
      std::copy_n(rho.data() + static_cast<std::size_t>(i) * n, n, pad.data() + static_cast<std::size_t>(i) * m);
  } else {
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        std::copy_n(rho.data() + (static_cast<std::size_t>(i) * n + j) * n, n,
                    pad.data() + (static_cast<std::size_t>(i) * m + j) * m);
  }
  CVector spec(km.table.size());
  raw_r2c(pad.data(), spec.data(), d, m);
  const double w = std::pow(2.0 * pi, 0.5 * d) / static_cast<double>(pad.size());
  for (std::size_t i = 0; i < spec.size(); ++i) spec[i] *= km.table[i] * w;
  raw_c2r(spec.data(), pad.data(), d, m);

  RVector out(rho.size());
  if (d == 2) {
    for (int i = 0; i < n; ++i)
      std::copy_n(pad.data() + static_cast<std::size_t>(i) * m, n, out.data() + static_cast<std::size_t>(i) * n);
  } else {
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        std::copy_n(pad.data() + (static_cast<std::size_t>(i) * m + j) * m, n,
                    out.data() + (static_cast<std::size_t>(i) * n + j) * n);
  }
  return out;
}

inline RealField convolve(const KernelMultiplier& km, const RealField& rho) {
  if (!(Lattice::physical(rho.grid) == km.lattice))
    throw std::invalid_argument("convolve: density grid does not match the multiplier lattice");
  RealField out(rho.grid, rho.space);
  out.values = convolve(km, rho.values);
  return out;
}

/// Convolution of a frequency-space density stored in DFT order, treating the
/// frequency grid as a lattice of spacing dxi.
inline RVector convolve_dft_ordered(const KernelMultiplier& km, const RVector& rho) {
  const int d = km.lattice.dim, n = km.lattice.n, h = n / 2;
  RVector centered(rho.size()), out(rho.size());
  auto shift = [&](const RVector& src, RVector& dst, int by) {
    for_each_index(d, n, [&](std::size_t idx, int i, int j, int k) {
      std::size_t to = d == 2 ? static_cast<std::size_t>((i + by) % n) * n + (j + by) % n
                              : (static_cast<std::size_t>((i + by) % n) * n + (j + by) % n) * n + (k + by) % n;
      dst[to] = src[idx];
    });
  };
  shift(rho, centered, h);
  RVector conv = convolve(km, centered);
  shift(conv, out, h);
  return out;
}

/// Relative deviation max |m_a - m_b| / |m_b| over half-spectrum points with
/// |xi| in [lo, hi]. Both multipliers must share lattice and padding.
inline double multiplier_deviation(const KernelMultiplier& a, const KernelMultiplier& b, double lo, double hi) {
  if (!(a.lattice == b.lattice) || a.m != b.m) throw std::invalid_argument("multiplier_deviation: incompatible tables");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.table.size(); ++i) {
    double xi = a.xi_of(i);
    if (xi < lo || xi > hi) continue;
    worst = std::max(worst, std::abs(a.table[i] - b.table[i]) / std::abs(b.table[i]));
  }
  return worst;
}

/// Axis cut (xi, m(xi)) for xi along the last axis, 0 <= xi <= xi_max.
inline void export_multiplier_csv(const KernelMultiplier& km, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "xi,m\n";
  os.precision(17);
  for (int k = 0; k <= km.m / 2; ++k) os << km.xi_of(static_cast<std::size_t>(k)) << ',' << km.table[k] << '\n';
}

// ---- integrability of K on growing boxes ---------------------------------

struct Lemma1Row {
  double box_length = 0.0;
  double norm = 0.0;
  double rel_change = 0.0;  // vs previous box; 0 for the first
};

struct Lemma1Report {
  int dim = 2;
  double p = 2.0;
  std::vector<Lemma1Row> rows;
  std::string regime;     // "integrable" (p > d), "log" (p = d), "growing" (p < d), "sup" (p = inf)
  bool cauchy = false;    // p > d: last relative change below tolerance
  // p = d: increments of ||K||_p^p per unit log L divided by |S^{d-1}|;
  // a (log L)^{1/p} law makes every entry close to 1.
  std::vector<double> log_slope_ratio;
};

/// Midpoint rule for int_{[-L/2, L/2]^d} K^p over cells of side 1/cells_per_unit,
/// using the sign symmetries of K.
inline double kernel_box_integral(int dim, double p, double L, int cells_per_unit = 16) {
  int half = static_cast<int>(std::lround(0.5 * L * cells_per_unit));
  if (half < 1) throw std::invalid_argument("kernel_box_integral: box too small for the quadrature");
  const double h = 0.5 * L / half;
  std::vector<double> c(static_cast<std::size_t>(half));
  for (int i = 0; i < half; ++i) c[i] = (i + 0.5) * h;
  double s = 0.0;
  if (dim == 2) {
    for (int i = 0; i < half; ++i) {
      double row = 0.0;
      for (int j = 0; j < half; ++j) row += std::pow(kernel_value(std::hypot(c[i], c[j])), p);
      s += row;
    }
    return 4.0 * s * h * h;
  }
  for (int i = 0; i < half; ++i) {
    double plane = 0.0;
    for (int j = 0; j < half; ++j) {
      double row = 0.0;
      double r2 = c[i] * c[i] + c[j] * c[j];
      for (int k = 0; k < half; ++k) row += std::pow(kernel_value(std::sqrt(r2 + c[k] * c[k])), p);
      plane += row;
    }
    s += plane;
  }
  return 8.0 * s * h * h * h;
}

inline Lemma1Report lemma1_report(int dim, double p, const std::vector<double>& boxes, int cells_per_unit = 16,
                                  double cauchy_tol = 5e-3) {
  if (!(p >= 1.0)) throw std::invalid_argument("lemma1_report: p must be >= 1");
  for (std::size_t i = 1; i < boxes.size(); ++i)
    if (!(boxes[i] > boxes[i - 1])) throw std::invalid_argument("lemma1_report: boxes must increase");
  Lemma1Report r;
  r.dim = dim;
  r.p = p;
  if (std::isinf(p)) {
    r.regime = "sup";
    for (double L : boxes) r.rows.push_back({L, 1.0, 0.0});  // K(0) = 1 = max K
    r.cauchy = true;
    return r;
  }
  std::vector<double> integrals;
  for (double L : boxes) {
    double I = kernel_box_integral(dim, p, L, cells_per_unit);
    integrals.push_back(I);
    Lemma1Row row{L, std::pow(I, 1.0 / p), 0.0};
    if (!r.rows.empty()) row.rel_change = std::abs(row.norm - r.rows.back().norm) / r.rows.back().norm;
    r.rows.push_back(row);
  }
  const double sphere = dim == 2 ? 2.0 * pi : 4.0 * pi;
  if (p > dim) {
    r.regime = "integrable";
    r.cauchy = r.rows.size() >= 2 && r.rows.back().rel_change < cauchy_tol;
  } else if (p == dim) {
    r.regime = "log";
    for (std::size_t i = 1; i < boxes.size(); ++i)
      r.log_slope_ratio.push_back((integrals[i] - integrals[i - 1]) / (sphere * std::log(boxes[i] / boxes[i - 1])));
  } else {
    r.regime = "growing";
  }
  return r;
}

}  // namespace sbp
