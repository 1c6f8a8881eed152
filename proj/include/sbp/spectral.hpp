#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <stdexcept>
#include <vector>

#include "sbp/fft.hpp"
#include "sbp/field.hpp"
#include "sbp/grid.hpp"

namespace sbp {

/// Builds a frequency table (DFT order) from a function of the wave vector.
template <class Fn>
RVector frequency_table(const GridSpec& g, Fn&& m) {
  RVector t(g.size());
  for_each_index(g.dim, g.n, [&](std::size_t idx, int i, int j, int k) {
    std::array<double, 3> xi{g.freq(i), g.freq(j), g.dim == 3 ? g.freq(k) : 0.0};
    t[idx] = m(xi);
  });
  return t;
}

/// Builds a table over physical grid points from a function of x.
template <class Fn>
RVector physical_table(const GridSpec& g, Fn&& w) {
  RVector t(g.size());
  for_each_index(g.dim, g.n, [&](std::size_t idx, int i, int j, int k) {
    std::array<double, 3> x{g.coord(i), g.coord(j), g.dim == 3 ? g.coord(k) : 0.0};
    t[idx] = w(x);
  });
  return t;
}

namespace detail {

// The checkerboard twiddles of fft/ifft cancel inside F^-1 m F, so a
// multiplier costs two raw transforms plus one scaled pointwise product.
template <class Table>
void multiply_raw(CVector& v, const GridSpec& g, const Table& m) {
  raw_dft(v.data(), g.dim, g.n, -1);
  const double inv = 1.0 / static_cast<double>(g.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] *= m[i] * inv;
  raw_dft(v.data(), g.dim, g.n, +1);
}

}  // namespace detail

/// F^{-1}[m F u] for a physical-space field.
inline ComplexField apply_multiplier(const ComplexField& u, const RVector& m) {
  require_space(u, Space::physical, "apply_multiplier");
  if (m.size() != u.size()) throw std::invalid_argument("apply_multiplier: table size mismatch");
  ComplexField out = u;
  detail::multiply_raw(out.values, u.grid, m);
  return out;
}

inline ComplexField apply_multiplier(const ComplexField& u, const CVector& m) {
  require_space(u, Space::physical, "apply_multiplier");
  if (m.size() != u.size()) throw std::invalid_argument("apply_multiplier: table size mismatch");
  ComplexField out = u;
  detail::multiply_raw(out.values, u.grid, m);
  return out;
}

enum class FracKind { laplacian, bessel, weight };

inline RVector fractional_table(const GridSpec& g, double gamma, FracKind kind) {
  if (!(gamma >= 0.0)) throw std::invalid_argument("fractional_op: gamma must be >= 0");
  switch (kind) {
    case FracKind::laplacian:
      return frequency_table(g, [&](const std::array<double, 3>& xi) {
        double r2 = xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2];
        return gamma == 0.0 ? 1.0 : std::pow(r2, 0.5 * gamma);
      });
    case FracKind::bessel:
      return frequency_table(g, [&](const std::array<double, 3>& xi) {
        return std::pow(1.0 + xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2], 0.5 * gamma);
      });
    case FracKind::weight:
      return physical_table(g, [&](const std::array<double, 3>& x) {
        double r2 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
        return gamma == 0.0 ? 1.0 : std::pow(r2, 0.5 * gamma);
      });
  }
  return {};
}

/// |xi|^gamma, <xi>^gamma as Fourier multipliers; |x|^gamma pointwise with
/// box-centered (unwrapped) coordinates.
inline ComplexField fractional_op(const ComplexField& u, double gamma, FracKind kind) {
  require_space(u, Space::physical, "fractional_op");
  RVector t = fractional_table(u.grid, gamma, kind);
  if (kind != FracKind::weight) return apply_multiplier(u, t);
  ComplexField out = u;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= t[i];
  return out;
}

/// Spectral partial derivative along `axis`.
inline ComplexField partial(const ComplexField& u, int axis) {
  require_space(u, Space::physical, "partial");
  const auto& g = u.grid;
  CVector m(g.size());
  for_each_index(g.dim, g.n, [&](std::size_t idx, int i, int j, int k) {
    int c = axis == 0 ? i : (axis == 1 ? j : k);
    // the Nyquist mode has no odd partner; zeroing it keeps real fields real
    m[idx] = (c == g.n / 2) ? cplx{0.0, 0.0} : cplx{0.0, g.freq(c)};
  });
  return apply_multiplier(u, m);
}

inline std::vector<ComplexField> gradient(const ComplexField& u) {
  std::vector<ComplexField> out;
  for (int a = 0; a < u.grid.dim; ++a) out.push_back(partial(u, a));
  return out;
}

// ---- norms ---------------------------------------------------------------

/// Sum of |v|^2 times the cell volume of whichever lattice the field lives on.
inline double l2_norm(const ComplexField& f) {
  double s = 0.0;
  for (const auto& v : f.values) s += std::norm(v);
  double w = f.space == Space::physical ? f.grid.cell_volume() : f.grid.freq_cell_volume();
  return std::sqrt(s * w);
}

inline double linf_norm(const ComplexField& f) { return max_abs(f); }

inline double lp_norm(const ComplexField& f, double p) {
  if (std::isinf(p)) return linf_norm(f);
  if (!(p >= 1.0)) throw std::invalid_argument("lp_norm: p must be >= 1");
  double s = 0.0;
  for (const auto& v : f.values) s += std::pow(std::abs(v), p);
  double w = f.space == Space::physical ? f.grid.cell_volume() : f.grid.freq_cell_volume();
  return std::pow(s * w, 1.0 / p);
}

/// ||w u||_{L2} evaluated on the spectrum by Parseval: ||m(xi) u_hat||.
inline double spectral_weighted_l2(const ComplexField& u_hat, const RVector& m) {
  require_space(u_hat, Space::frequency, "spectral_weighted_l2");
  double s = 0.0;
  for (std::size_t i = 0; i < u_hat.size(); ++i) s += m[i] * m[i] * std::norm(u_hat[i]);
  return std::sqrt(s * u_hat.grid.freq_cell_volume());
}

struct NormReport {
  double l2 = 0.0;
  double linf = 0.0;
  double sobolev_gamma = 0.0;   // ||<grad>^gamma u||
  double weighted_gamma = 0.0;  // |||x|^gamma u||
  std::vector<std::pair<double, double>> lp;  // (p, ||u||_p)

  [[nodiscard]] double h_gamma_gamma() const { return sobolev_gamma + weighted_gamma; }
};

inline NormReport norms(const ComplexField& u, double gamma, const std::vector<double>& ps = {}) {
  require_space(u, Space::physical, "norms");
  NormReport r;
  r.l2 = l2_norm(u);
  r.linf = linf_norm(u);
  ComplexField uh = fft(u);
  r.sobolev_gamma = spectral_weighted_l2(uh, fractional_table(u.grid, gamma, FracKind::bessel));
  RVector w = fractional_table(u.grid, gamma, FracKind::weight);
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) s += w[i] * w[i] * std::norm(u[i]);
  r.weighted_gamma = std::sqrt(s * u.grid.cell_volume());
  for (double p : ps) r.lp.emplace_back(p, lp_norm(u, p));
  return r;
}

// ---- resolution monitors -------------------------------------------------

/// Width (in cells) of the boundary layer used by the box-size monitor.
inline int boundary_layer_cells(int n) { return std::max(2, n / 64); }

/// Fraction of the mass sitting in the outermost boundary_layer_cells(n)
/// cells on each face of the box.
inline double boundary_mass_fraction(const ComplexField& u) {
  require_space(u, Space::physical, "boundary_mass_fraction");
  const auto& g = u.grid;
  const int b = boundary_layer_cells(g.n);
  auto edge = [&](int i) { return i < b || i >= g.n - b; };
  double total = 0.0, outer = 0.0;
  for_each_index(g.dim, g.n, [&](std::size_t idx, int i, int j, int k) {
    double m = std::norm(u[idx]);
    total += m;
    if (edge(i) || edge(j) || (g.dim == 3 && edge(k))) outer += m;
  });
  return total > 0.0 ? outer / total : 0.0;
}

/// Fraction of spectral energy with max_a |xi_a| > xi_max / 2 (top octave).
inline double spectral_tail_fraction_of_spectrum(const ComplexField& uh) {
  require_space(uh, Space::frequency, "spectral_tail_fraction");
  const auto& g = uh.grid;
  const int q = g.n / 4;
  auto high = [&](int k) { return std::abs(g.mode(k)) > q; };
  double total = 0.0, tail = 0.0;
  for_each_index(g.dim, g.n, [&](std::size_t idx, int i, int j, int k) {
    double e = std::norm(uh[idx]);
    total += e;
    if (high(i) || high(j) || (g.dim == 3 && high(k))) tail += e;
  });
  return total > 0.0 ? tail / total : 0.0;
}

inline double spectral_tail_fraction(const ComplexField& u) {
  if (u.space == Space::frequency) return spectral_tail_fraction_of_spectrum(u);
  return spectral_tail_fraction_of_spectrum(fft(u));
}

/// Mass fraction inside the half box |x|_inf < L/4.
inline double half_box_mass_fraction(const ComplexField& u) {
  require_space(u, Space::physical, "half_box_mass_fraction");
  const auto& g = u.grid;
  auto inside = [&](int i) { return std::abs(g.coord(i)) < 0.25 * g.box_length; };
  double total = 0.0, in = 0.0;
  for_each_index(g.dim, g.n, [&](std::size_t idx, int i, int j, int k) {
    double m = std::norm(u[idx]);
    total += m;
    if (inside(i) && inside(j) && (g.dim == 2 || inside(k))) in += m;
  });
  return total > 0.0 ? in / total : 1.0;
}

/// Relative L2 distance ||a - b|| / ||b|| (absolute when b = 0).
inline double relative_l2(const ComplexField& a, const ComplexField& b) {
  require_same_grid(a.grid, b.grid, "relative_l2");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += std::norm(a[i] - b[i]);
    den += std::norm(b[i]);
  }
  return den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
}

inline double max_abs_diff(const ComplexField& a, const ComplexField& b) {
  require_same_grid(a.grid, b.grid, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace sbp
