#pragma once

#include <fftw3.h>

#include <cmath>
#include <complex>
#include <map>
#include <mutex>
#include <tuple>

#include "pulseprobe/grid.hpp"

namespace pulseprobe::fft {

namespace detail {

/// Plans are created once per (ny, nx, sign) with FFTW_ESTIMATE | FFTW_UNALIGNED, so the
/// chosen algorithm is deterministic and plans can run on any buffer from any thread.
class PlanCache {
 public:
  static PlanCache& instance() {
    static PlanCache cache;
    return cache;
  }

  fftw_plan get(std::size_t ny, std::size_t nx, int sign) {
    std::lock_guard<std::mutex> lock(mutex_);
    const auto key = std::make_tuple(ny, nx, sign);
    if (auto it = plans_.find(key); it != plans_.end()) return it->second;
    fftw_complex* buf = fftw_alloc_complex(ny * nx);
    fftw_plan plan = fftw_plan_dft_2d(static_cast<int>(ny), static_cast<int>(nx), buf, buf, sign,
                                      FFTW_ESTIMATE | FFTW_UNALIGNED);
    fftw_free(buf);
    plans_.emplace(key, plan);
    return plan;
  }

  PlanCache(const PlanCache&) = delete;
  PlanCache& operator=(const PlanCache&) = delete;

 private:
  PlanCache() = default;
  ~PlanCache() {
    for (auto& [key, plan] : plans_) fftw_destroy_plan(plan);
  }

  std::mutex mutex_;
  std::map<std::tuple<std::size_t, std::size_t, int>, fftw_plan> plans_;
};

inline fftw_complex* as_fftw(cplx* p) { return reinterpret_cast<fftw_complex*>(p); }

}  // namespace detail

/// In-place unnormalized DFT with zero frequency at index 0 (FFTW layout).
inline void forward_inplace(ComplexGrid& g) {
  fftw_plan plan = detail::PlanCache::instance().get(g.ny(), g.nx(), FFTW_FORWARD);
  fftw_execute_dft(plan, detail::as_fftw(g.data()), detail::as_fftw(g.data()));
}

inline void backward_inplace(ComplexGrid& g) {
  fftw_plan plan = detail::PlanCache::instance().get(g.ny(), g.nx(), FFTW_BACKWARD);
  fftw_execute_dft(plan, detail::as_fftw(g.data()), detail::as_fftw(g.data()));
}

/// Multiplies by (-1)^(y+x); for even sizes this moves the zero frequency between
/// index 0 and the array centre.
inline void checkerboard(ComplexGrid& g) {
  for (std::size_t y = 0; y < g.ny(); ++y) {
    cplx* row = &g(y, 0);
    for (std::size_t x = (y & 1U); x < g.nx(); x += 2) row[x] = -row[x];
  }
}

/// Centred unitary transform in place; requires even dimensions.
inline void centered_forward_inplace(ComplexGrid& g) {
  checkerboard(g);
  forward_inplace(g);
  checkerboard(g);
  double scale = 1.0 / std::sqrt(static_cast<double>(g.size()));
  if (((g.ny() / 2) + (g.nx() / 2)) % 2 == 1) scale = -scale;
  for (auto& v : g) v *= scale;
}

inline void centered_backward_inplace(ComplexGrid& g) {
  checkerboard(g);
  backward_inplace(g);
  checkerboard(g);
  double scale = 1.0 / std::sqrt(static_cast<double>(g.size()));
  if (((g.ny() / 2) + (g.nx() / 2)) % 2 == 1) scale = -scale;
  for (auto& v : g) v *= scale;
}

/// Signed integer frequency of FFTW bin i on an axis of length n.
inline double signed_frequency(std::size_t i, std::size_t n) {
  return i < (n + 1) / 2 ? static_cast<double>(i) : static_cast<double>(i) - static_cast<double>(n);
}

}  // namespace pulseprobe::fft
