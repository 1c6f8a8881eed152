#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "sbp/fft.hpp"
#include "sbp/field.hpp"
#include "sbp/grid.hpp"

namespace sbp {

enum class OutOfBox {
  error,  // any target outside the sampling box throws
  zero,   // targets outside the box evaluate to 0, provided the field is negligible on its edge
};

struct ResampleOptions {
  OutOfBox policy = OutOfBox::error;
  double edge_tolerance = 1e-6;  // max |edge value| / max |value| allowed under OutOfBox::zero
};

namespace detail {

using RowMat = Eigen::Matrix<cplx, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Largest modulus on the outermost two cells of a centered n^dim array,
// relative to the global max.
inline double edge_ratio(const CVector& v, int dim, int n) {
  double edge = 0.0, all = 0.0;
  auto on_edge = [&](int i) { return i < 2 || i >= n - 2; };
  for_each_index(dim, n, [&](std::size_t idx, int i, int j, int k) {
    double a = std::abs(v[idx]);
    all = std::max(all, a);
    if (on_edge(i) || on_edge(j) || (dim == 3 && on_edge(k))) edge = std::max(edge, a);
  });
  return all > 0.0 ? edge / all : 0.0;
}

}  // namespace detail

/// Evaluates the band-limited trigonometric interpolant of samples on the
/// centered lattice y_i = (i - n/2) s (row-major, n^dim values) at the tensor
/// product of `targets` along every axis. The Nyquist mode is split
/// symmetrically (a cosine), so real samples give a real interpolant.
inline CVector interpolate_centered(const CVector& values, int dim, int n, double s,
                                    const std::vector<double>& targets, const ResampleOptions& opt = {}) {
  const std::size_t N = values.size();
  const int m = static_cast<int>(targets.size());
  const double half = 0.5 * n * s;

  // Targets outside [-n s/2, n s/2] would otherwise see a periodic image.
  int lo = m, hi = 0;
  for (int j = 0; j < m; ++j) {
    if (targets[j] >= -half && targets[j] <= half) {
      lo = std::min(lo, j);
      hi = std::max(hi, j + 1);
    }
  }
  bool outside = lo > 0 || hi < m;
  for (int j = lo; j < hi; ++j)
    if (targets[j] < -half || targets[j] > half) throw std::invalid_argument("interpolate: targets must be sorted");
  if (outside) {
    if (opt.policy == OutOfBox::error) throw std::out_of_range("interpolate: target points outside the sampling box");
    double r = detail::edge_ratio(values, dim, n);
    if (r > opt.edge_tolerance) {
      throw std::out_of_range("interpolate: field is not negligible at the box edge (edge/max = " +
                              std::to_string(r) + "), cannot extend by zero");
    }
  }

  // Mode coefficients c_k with u(y) = sum_k c_k e^{i w_k y}, w_k = 2 pi k'/(n s).
  CVector c = values;
  raw_dft(c.data(), dim, n, -1);
  detail::checkerboard(c, dim, n);
  for (auto& z : c) z /= static_cast<double>(N);

  const int mi = hi > lo ? hi - lo : 0;
  detail::RowMat E(mi, n);
  const double dw = 2.0 * pi / (n * s);
  for (int j = 0; j < mi; ++j) {
    double y = targets[lo + j];
    for (int k = 0; k < n; ++k) {
      int kk = k < n / 2 ? k : k - n;
      E(j, k) = kk == -n / 2 ? cplx{std::cos(dw * kk * y), 0.0} : std::polar(1.0, dw * kk * y);
    }
  }

  std::size_t msz = 1;
  for (int a = 0; a < dim; ++a) msz *= static_cast<std::size_t>(m);
  CVector out(msz, cplx{0.0, 0.0});
  if (mi == 0) return out;

  if (dim == 2) {
    Eigen::Map<const detail::RowMat> C(c.data(), n, n);
    detail::RowMat R = E * C * E.transpose();
    for (int a = 0; a < mi; ++a)
      for (int b = 0; b < mi; ++b) out[static_cast<std::size_t>(lo + a) * m + (lo + b)] = R(a, b);
  } else {
    Eigen::Map<const detail::RowMat> C(c.data(), n, static_cast<Eigen::Index>(n) * n);
    detail::RowMat T = E * C;  // mi x n^2
    for (int a = 0; a < mi; ++a) {
      Eigen::Map<const detail::RowMat> S(T.row(a).data(), n, n);
      detail::RowMat R = E * S * E.transpose();
      for (int b = 0; b < mi; ++b)
        for (int d = 0; d < mi; ++d)
          out[(static_cast<std::size_t>(lo + a) * m + (lo + b)) * m + (lo + d)] = R(b, d);
    }
  }
  return out;
}

/// DFT order <-> centered order along every axis (an involution for even n).
inline CVector dft_to_centered(const CVector& v, int dim, int n) {
  CVector out(v.size());
  const int h = n / 2;
  for_each_index(dim, n, [&](std::size_t idx, int i, int j, int k) {
    std::size_t dst;
    if (dim == 2)
      dst = static_cast<std::size_t>((i + h) % n) * n + (j + h) % n;
    else
      dst = (static_cast<std::size_t>((i + h) % n) * n + (j + h) % n) * n + (k + h) % n;
    out[dst] = v[idx];
  });
  return out;
}

inline CVector centered_to_dft(const CVector& v, int dim, int n) { return dft_to_centered(v, dim, n); }

/// Physical field evaluated at the tensor grid `targets`^dim.
inline CVector evaluate_physical(const ComplexField& u, const std::vector<double>& targets,
                                 const ResampleOptions& opt = {}) {
  require_space(u, Space::physical, "evaluate_physical");
  return interpolate_centered(u.values, u.grid.dim, u.grid.n, u.grid.spacing(), targets, opt);
}

/// Frequency field (DFT order) evaluated at wave vectors `targets`^dim.
inline CVector evaluate_frequency(const ComplexField& fh, const std::vector<double>& targets,
                                  const ResampleOptions& opt = {}) {
  require_space(fh, Space::frequency, "evaluate_frequency");
  const auto& g = fh.grid;
  return interpolate_centered(dft_to_centered(fh.values, g.dim, g.n), g.dim, g.n, g.dxi(), targets, opt);
}

/// Physical coordinates of one axis scaled by `factor`.
inline std::vector<double> scaled_axis(const GridSpec& g, double factor) {
  std::vector<double> t(static_cast<std::size_t>(g.n));
  for (int i = 0; i < g.n; ++i) t[static_cast<std::size_t>(i)] = factor * g.coord(i);
  return t;
}

}  // namespace sbp
