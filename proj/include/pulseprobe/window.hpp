#pragma once

#include <cmath>
#include <cstddef>

#include "pulseprobe/error.hpp"
#include "pulseprobe/grid.hpp"
#include "pulseprobe/wavefield.hpp"

namespace pulseprobe {

/// Placement of an n_y x n_x window on an object grid. The window is cut at the
/// integer origin and the sub-pixel remainder `frac` (in [0, 1) per axis) is applied
/// to the probe instead: the exit wave is O(origin + u) P(u - frac). Shifting the
/// smooth, compact probe avoids the ringing a Fourier shift of an object patch with
/// hard edges would produce.
struct Window {
  std::ptrdiff_t iy0 = 0;
  std::ptrdiff_t ix0 = 0;
  Vec2 frac;
  std::size_t ny = 0;
  std::size_t nx = 0;
};

/// Locates the window centred on physical `position` for an object grid whose centre
/// pixel (ny/2, nx/2) sits at `object_center`.
inline Window locate_window(Vec2 position, Vec2 object_center, double pitch, std::size_t obj_ny,
                            std::size_t obj_nx, std::size_t ny, std::size_t nx) {
  const double sx = (position.x - object_center.x) / pitch + static_cast<double>(obj_nx / 2) - static_cast<double>(nx / 2);
  const double sy = (position.y - object_center.y) / pitch + static_cast<double>(obj_ny / 2) - static_cast<double>(ny / 2);
  if (!std::isfinite(sx) || !std::isfinite(sy)) throw Error(ErrorKind::Numeric, "non-finite scan position");
  Window w;
  w.ny = ny;
  w.nx = nx;
  double fx = std::floor(sx);
  double fy = std::floor(sy);
  w.frac = {sx - fx, sy - fy};
  // Snap shifts that are a rounding error away from an integer.
  constexpr double snap = 1e-9;
  if (w.frac.x < snap) w.frac.x = 0.0;
  if (w.frac.y < snap) w.frac.y = 0.0;
  if (w.frac.x > 1.0 - snap) { w.frac.x = 0.0; fx += 1.0; }
  if (w.frac.y > 1.0 - snap) { w.frac.y = 0.0; fy += 1.0; }
  w.ix0 = static_cast<std::ptrdiff_t>(fx);
  w.iy0 = static_cast<std::ptrdiff_t>(fy);
  return w;
}

inline Window locate_window(Vec2 position, const WaveField& object, Vec2 object_center, std::size_t ny,
                            std::size_t nx) {
  return locate_window(position, object_center, object.pitch, object.ny(), object.nx(), ny, nx);
}

/// The window moved to the nearest whole pixel (frac = 0).
inline Window round_window(Window w) {
  if (w.frac.x >= 0.5) ++w.ix0;
  if (w.frac.y >= 0.5) ++w.iy0;
  w.frac = {};
  return w;
}

inline bool window_inside(const Window& w, std::size_t obj_ny, std::size_t obj_nx) {
  return w.iy0 >= 0 && w.ix0 >= 0 && w.iy0 + static_cast<std::ptrdiff_t>(w.ny) <= static_cast<std::ptrdiff_t>(obj_ny) &&
         w.ix0 + static_cast<std::ptrdiff_t>(w.nx) <= static_cast<std::ptrdiff_t>(obj_nx);
}

/// Copies the object patch under the window into `out`.
inline void extract_window(const ComplexGrid& object, const Window& w, ComplexGrid& out) {
  if (!window_inside(w, object.ny(), object.nx())) throw Error(ErrorKind::OutOfField, "window leaves the object grid");
  if (out.ny() != w.ny || out.nx() != w.nx) out = ComplexGrid(w.ny, w.nx);
  for (std::size_t y = 0; y < w.ny; ++y) {
    const cplx* src = &object(static_cast<std::size_t>(w.iy0) + y, static_cast<std::size_t>(w.ix0));
    cplx* dst = &out(y, 0);
    for (std::size_t x = 0; x < w.nx; ++x) dst[x] = src[x];
  }
}

/// Adjoint of extract_window: adds `patch` into `target` under the window.
inline void add_window(ComplexGrid& target, const ComplexGrid& patch, const Window& w) {
  for (std::size_t y = 0; y < w.ny; ++y) {
    cplx* dst = &target(static_cast<std::size_t>(w.iy0) + y, static_cast<std::size_t>(w.ix0));
    const cplx* src = &patch(y, 0);
    for (std::size_t x = 0; x < w.nx; ++x) dst[x] += src[x];
  }
}

/// Probe displaced by the window's sub-pixel remainder, P(u - frac).
inline void displace_probe(const ComplexGrid& probe, const Window& w, ComplexGrid& out) {
  out = probe;
  if (w.frac.x != 0.0 || w.frac.y != 0.0) fourier_shift_inplace(out, Vec2{-w.frac.x, -w.frac.y});
}

/// Adjoint of displace_probe (in place).
inline void undisplace_inplace(ComplexGrid& g, const Window& w) {
  if (w.frac.x != 0.0 || w.frac.y != 0.0) fourier_shift_inplace(g, w.frac);
}

inline void add_window(RealGrid& target, const RealGrid& patch, const Window& w) {
  for (std::size_t y = 0; y < w.ny; ++y) {
    double* dst = &target(static_cast<std::size_t>(w.iy0) + y, static_cast<std::size_t>(w.ix0));
    const double* src = &patch(y, 0);
    for (std::size_t x = 0; x < w.nx; ++x) dst[x] += src[x];
  }
}

}  // namespace pulseprobe
