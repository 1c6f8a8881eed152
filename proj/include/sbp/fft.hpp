#pragma once

#include <fftw3.h>

#include <array>
#include <cmath>
#include <map>
#include <mutex>
#include <stdexcept>
#include <tuple>

#include "sbp/field.hpp"
#include "sbp/grid.hpp"

namespace sbp {

namespace detail {

enum class PlanKind { c2c_forward, c2c_backward, r2c, c2r };

// FFTW's planner is not thread safe, execution is. Plans are built once per
// shape with FFTW_ESTIMATE (no timing, so the chosen algorithm and the output
// bits do not depend on machine load) and live for the whole process.
class PlanCache {
 public:
  static PlanCache& instance() {
    static PlanCache cache;
    return cache;
  }

  fftw_plan get(PlanKind kind, int dim, int n) {
    std::lock_guard<std::mutex> lock(mutex_);
    auto key = std::make_tuple(static_cast<int>(kind), dim, n);
    if (auto it = plans_.find(key); it != plans_.end()) return it->second;

    std::array<int, 3> dims{n, n, n};
    std::size_t total = 1;
    for (int a = 0; a < dim; ++a) total *= static_cast<std::size_t>(n);
    std::size_t half = total / static_cast<std::size_t>(n) * static_cast<std::size_t>(n / 2 + 1);

    fftw_plan plan = nullptr;
    switch (kind) {
      case PlanKind::c2c_forward:
      case PlanKind::c2c_backward: {
        auto* buf = fftw_alloc_complex(total);
        plan = fftw_plan_dft(dim, dims.data(), buf, buf,
                             kind == PlanKind::c2c_forward ? FFTW_FORWARD : FFTW_BACKWARD, FFTW_ESTIMATE);
        fftw_free(buf);
        break;
      }
      case PlanKind::r2c: {
        auto* r = fftw_alloc_real(total);
        auto* c = fftw_alloc_complex(half);
        plan = fftw_plan_dft_r2c(dim, dims.data(), r, c, FFTW_ESTIMATE);
        fftw_free(r);
        fftw_free(c);
        break;
      }
      case PlanKind::c2r: {
        auto* r = fftw_alloc_real(total);
        auto* c = fftw_alloc_complex(half);
        plan = fftw_plan_dft_c2r(dim, dims.data(), c, r, FFTW_ESTIMATE);
        fftw_free(r);
        fftw_free(c);
        break;
      }
    }
    if (plan == nullptr) throw std::runtime_error("FFTW failed to create a plan");
    plans_.emplace(key, plan);
    return plan;
  }

 private:
  PlanCache() = default;
  std::mutex mutex_;
  std::map<std::tuple<int, int, int>, fftw_plan> plans_;
};

inline fftw_complex* as_fftw(cplx* p) { return reinterpret_cast<fftw_complex*>(p); }

}  // namespace detail

/// Unnormalized in-place DFT over an n^dim row-major array.
/// sign = -1 computes sum_j a_j e^{-2 pi i jk/n}, sign = +1 the conjugate sum.
inline void raw_dft(cplx* data, int dim, int n, int sign) {
  auto kind = sign < 0 ? detail::PlanKind::c2c_forward : detail::PlanKind::c2c_backward;
  fftw_plan plan = detail::PlanCache::instance().get(kind, dim, n);
  fftw_execute_dft(plan, detail::as_fftw(data), detail::as_fftw(data));
}

inline std::size_t half_spectrum_size(int dim, int n) {
  std::size_t s = static_cast<std::size_t>(n / 2 + 1);
  for (int a = 1; a < dim; ++a) s *= static_cast<std::size_t>(n);
  return s;
}

/// Real-to-half-complex DFT (unnormalized). `in` is n^dim reals, `out` holds
/// half_spectrum_size(dim, n) values with the last axis truncated.
inline void raw_r2c(double* in, cplx* out, int dim, int n) {
  fftw_plan plan = detail::PlanCache::instance().get(detail::PlanKind::r2c, dim, n);
  fftw_execute_dft_r2c(plan, in, detail::as_fftw(out));
}

/// Inverse of raw_r2c up to the factor n^dim. Overwrites `in`.
inline void raw_c2r(cplx* in, double* out, int dim, int n) {
  fftw_plan plan = detail::PlanCache::instance().get(detail::PlanKind::c2r, dim, n);
  fftw_execute_dft_c2r(plan, detail::as_fftw(in), out);
}

namespace detail {

// (-1)^(i+j+k): moves the DFT origin from index 0 to the box center n/2.
inline void checkerboard(CVector& v, int dim, int n) {
  for_each_index(dim, n, [&](std::size_t idx, int i, int j, int k) {
    if ((i + j + k) & 1) v[idx] = -v[idx];
  });
}

inline void scale(CVector& v, double s) {
  for (auto& z : v) z *= s;
}

}  // namespace detail

/// Physical -> frequency, approximating (2 pi)^{-d/2} int u(x) e^{-i x.xi} dx.
inline void fft_inplace(ComplexField& f) {
  require_space(f, Space::physical, "fft");
  const auto& g = f.grid;
  raw_dft(f.values.data(), g.dim, g.n, -1);
  detail::checkerboard(f.values, g.dim, g.n);
  detail::scale(f.values, g.cell_volume() * std::pow(2.0 * pi, -0.5 * g.dim));
  f.space = Space::frequency;
}

/// Frequency -> physical, approximating (2 pi)^{-d/2} int F(xi) e^{i x.xi} dxi.
inline void ifft_inplace(ComplexField& f) {
  require_space(f, Space::frequency, "ifft");
  const auto& g = f.grid;
  detail::checkerboard(f.values, g.dim, g.n);
  raw_dft(f.values.data(), g.dim, g.n, +1);
  detail::scale(f.values, g.freq_cell_volume() * std::pow(2.0 * pi, -0.5 * g.dim));
  f.space = Space::physical;
}

[[nodiscard]] inline ComplexField fft(ComplexField f) {
  fft_inplace(f);
  return f;
}

[[nodiscard]] inline ComplexField ifft(ComplexField f) {
  ifft_inplace(f);
  return f;
}

}  // namespace sbp
