#pragma once

#include <complex>
#include <cstdlib>
#include <new>
#include <stdexcept>
#include <string>
#include <vector>

#include "sbp/grid.hpp"

namespace sbp {

using cplx = std::complex<double>;

/// 64-byte aligned storage so FFTW plans made on one buffer can run on any other.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::size_t alignment = 64;

  AlignedAllocator() noexcept = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t count) {
    if (count == 0) return nullptr;
    std::size_t bytes = (count * sizeof(T) + alignment - 1) / alignment * alignment;
    void* p = std::aligned_alloc(alignment, bytes);
    if (p == nullptr) throw std::bad_alloc();
    return static_cast<T*>(p);
  }
  void deallocate(T* p, std::size_t) noexcept { std::free(p); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

using CVector = std::vector<cplx, AlignedAllocator<cplx>>;
using RVector = std::vector<double, AlignedAllocator<double>>;

enum class Space { physical, frequency };

inline const char* to_string(Space s) { return s == Space::physical ? "physical" : "frequency"; }

/// Complex samples on a GridSpec, either at physical points (box-centered
/// row-major order) or at frequencies (DFT order).
struct ComplexField {
  GridSpec grid;
  Space space = Space::physical;
  CVector values;

  ComplexField() = default;
  ComplexField(const GridSpec& g, Space s) : grid(g), space(s), values(g.size(), cplx{0.0, 0.0}) {}
  ComplexField(const GridSpec& g, Space s, CVector v) : grid(g), space(s), values(std::move(v)) {
    if (values.size() != grid.size()) throw std::invalid_argument("field value count does not match grid");
  }

  [[nodiscard]] std::size_t size() const { return values.size(); }
  cplx& operator[](std::size_t i) { return values[i]; }
  const cplx& operator[](std::size_t i) const { return values[i]; }
};

/// Real samples on a GridSpec; used for densities, potentials and phase fields.
struct RealField {
  GridSpec grid;
  Space space = Space::physical;
  RVector values;

  RealField() = default;
  RealField(const GridSpec& g, Space s) : grid(g), space(s), values(g.size(), 0.0) {}

  [[nodiscard]] std::size_t size() const { return values.size(); }
  double& operator[](std::size_t i) { return values[i]; }
  const double& operator[](std::size_t i) const { return values[i]; }
};

inline void require_space(const ComplexField& f, Space s, const char* what) {
  if (f.space != s) {
    throw std::invalid_argument(std::string(what) + ": expected a " + to_string(s) +
                                "-space field, got " + to_string(f.space));
  }
}

inline void require_same_grid(const GridSpec& a, const GridSpec& b, const char* what) {
  if (!(a == b)) throw std::invalid_argument(std::string(what) + ": grid mismatch");
}

/// |x|^2 at every physical grid point.
inline RVector radius_squared(const GridSpec& g) {
  RVector r2(g.size());
  const double h = g.spacing();
  for_each_index(g.dim, g.n, [&](std::size_t idx, int i, int j, int k) {
    double x = (i - g.n / 2) * h, y = (j - g.n / 2) * h;
    double s = x * x + y * y;
    if (g.dim == 3) {
      double z = (k - g.n / 2) * h;
      s += z * z;
    }
    r2[idx] = s;
  });
  return r2;
}

/// |xi|^2 at every frequency index (DFT order).
inline RVector frequency_squared(const GridSpec& g) {
  RVector k2(g.size());
  for_each_index(g.dim, g.n, [&](std::size_t idx, int i, int j, int k) {
    double a = g.freq(i), b = g.freq(j);
    double s = a * a + b * b;
    if (g.dim == 3) {
      double c = g.freq(k);
      s += c * c;
    }
    k2[idx] = s;
  });
  return k2;
}

inline RealField modulus_squared(const ComplexField& f) {
  RealField out(f.grid, f.space);
  for (std::size_t i = 0; i < f.size(); ++i) out[i] = std::norm(f[i]);
  return out;
}

inline double max_abs(const ComplexField& f) {
  double m = 0.0;
  for (const auto& v : f.values) m = std::max(m, std::abs(v));
  return m;
}

}  // namespace sbp
