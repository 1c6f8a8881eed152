#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <stdexcept>
#include <string>

namespace sbp {

inline constexpr double pi = std::numbers::pi;

/// Uniform periodic box [-L/2, L/2)^dim with n points per axis.
///
/// Physical index i maps to x = (i - n/2) h, so the origin sits at i = n/2.
/// Frequency-space data is stored in standard DFT order: index k maps to
/// xi = 2 pi k' / L with k' = k for k < n/2 and k' = k - n otherwise, which
/// covers the symmetric set [-n/2, n/2) with the Nyquist mode at k = n/2.
struct GridSpec {
  int dim = 2;
  int n = 0;
  double box_length = 0.0;

  [[nodiscard]] static GridSpec make(int dim, int n, double box_length) {
    if (dim != 2 && dim != 3) {
      throw std::invalid_argument("grid dimension must be 2 or 3, got " + std::to_string(dim));
    }
    if (n < 8 || (n & (n - 1)) != 0) {
      throw std::invalid_argument("points per axis must be a power of two >= 8, got " +
                                  std::to_string(n));
    }
    if (!(box_length > 0.0) || !std::isfinite(box_length)) {
      throw std::invalid_argument("box length must be positive and finite");
    }
    return GridSpec{dim, n, box_length};
  }

  [[nodiscard]] double spacing() const { return box_length / n; }
  [[nodiscard]] double dxi() const { return 2.0 * pi / box_length; }
  [[nodiscard]] double xi_max() const { return pi / spacing(); }
  [[nodiscard]] double cell_volume() const { return std::pow(spacing(), dim); }
  [[nodiscard]] double freq_cell_volume() const { return std::pow(dxi(), dim); }

  [[nodiscard]] std::size_t size() const {
    std::size_t s = 1;
    for (int a = 0; a < dim; ++a) s *= static_cast<std::size_t>(n);
    return s;
  }

  [[nodiscard]] double coord(int i) const { return (i - n / 2) * spacing(); }

  /// Signed mode number k' in [-n/2, n/2) for DFT index k.
  [[nodiscard]] int mode(int k) const { return k < n / 2 ? k : k - n; }
  [[nodiscard]] double freq(int k) const { return dxi() * mode(k); }

  /// DFT index for a signed mode number in [-n/2, n/2).
  [[nodiscard]] int freq_index(int m) const {
    if (m < -n / 2 || m >= n / 2) throw std::out_of_range("mode outside [-n/2, n/2)");
    return m >= 0 ? m : m + n;
  }

  /// Split a flat row-major index into per-axis indices.
  [[nodiscard]] std::array<int, 3> unflatten(std::size_t idx) const {
    std::array<int, 3> out{0, 0, 0};
    for (int a = dim - 1; a >= 0; --a) {
      out[a] = static_cast<int>(idx % static_cast<std::size_t>(n));
      idx /= static_cast<std::size_t>(n);
    }
    return out;
  }

  [[nodiscard]] std::size_t flatten(const std::array<int, 3>& ijk) const {
    std::size_t idx = 0;
    for (int a = 0; a < dim; ++a) idx = idx * static_cast<std::size_t>(n) + ijk[a];
    return idx;
  }

  friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

/// Uniform centered lattice used by the kernel convolution; it can describe
/// either a physical grid (spacing h) or a frequency grid (spacing dxi).
struct Lattice {
  int dim = 2;
  int n = 0;
  double spacing = 1.0;

  [[nodiscard]] static Lattice physical(const GridSpec& g) { return {g.dim, g.n, g.spacing()}; }
  [[nodiscard]] static Lattice frequency(const GridSpec& g) { return {g.dim, g.n, g.dxi()}; }

  [[nodiscard]] std::size_t size() const {
    std::size_t s = 1;
    for (int a = 0; a < dim; ++a) s *= static_cast<std::size_t>(n);
    return s;
  }

  friend bool operator==(const Lattice&, const Lattice&) = default;
};

/// Calls fn(flat_index, i0, i1, i2) over every grid point in row-major order;
/// i2 is 0 in two dimensions.
template <class Fn>
inline void for_each_index(int dim, int n, Fn&& fn) {
  std::size_t idx = 0;
  if (dim == 2) {
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) fn(idx++, i, j, 0);
  } else {
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        for (int k = 0; k < n; ++k) fn(idx++, i, j, k);
  }
}

}  // namespace sbp
