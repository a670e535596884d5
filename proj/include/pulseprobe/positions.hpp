#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <optional>
#include <vector>

#include "pulseprobe/engine.hpp"
#include "pulseprobe/error.hpp"
#include "pulseprobe/fft.hpp"
#include "pulseprobe/frameset.hpp"
#include "pulseprobe/parallel.hpp"
#include "pulseprobe/simulator.hpp"
#include "pulseprobe/window.hpp"

namespace pulseprobe {

/// Regular lattice of candidate positions, row-major, candidate (iy, ix) at
/// origin + cell * (ix, iy).
struct SearchGrid {
  Vec2 origin;
  double cell = 0.0;
  std::size_t ny = 0;
  std::size_t nx = 0;

  std::size_t size() const noexcept { return ny * nx; }
  Vec2 at(std::size_t iy, std::size_t ix) const {
    return {origin.x + cell * static_cast<double>(ix), origin.y + cell * static_cast<double>(iy)};
  }
};

/// Lattice centred on `center` reaching at least `half_span` along each axis.
inline SearchGrid make_search_grid(Vec2 center, Vec2 half_span, double cell) {
  if (!(cell > 0.0)) throw Error(ErrorKind::Range, "search cell must be positive");
  if (half_span.x < 0.0 || half_span.y < 0.0) throw Error(ErrorKind::Range, "search span must be non-negative");
  const auto hx = static_cast<std::size_t>(std::ceil(half_span.x / cell - 1e-9));
  const auto hy = static_cast<std::size_t>(std::ceil(half_span.y / cell - 1e-9));
  SearchGrid g;
  g.cell = cell;
  g.nx = 2 * hx + 1;
  g.ny = 2 * hy + 1;
  g.origin = {center.x - cell * static_cast<double>(hx), center.y - cell * static_cast<double>(hy)};
  return g;
}

namespace positions_detail {

/// Zero-mean, unit-norm copy of the measured amplitudes sqrt(g); empty when g is flat.
/// Correlating amplitudes rather than intensities keeps the bright central lobe from
/// swamping the weaker scattering that carries the position information.
inline std::vector<float> standardized(const RealGrid& g, const MaskGrid& mask) {
  const bool all = mask.empty();
  double mean = 0.0;
  std::size_t count = 0;
  RealGrid h = g;
  for (auto& v : h) v = std::sqrt(std::max(v, 0.0));
  for (std::size_t i = 0; i < g.size(); ++i)
    if (all || mask[i]) {
      mean += h[i];
      ++count;
    }
  if (count == 0) return {};
  mean /= static_cast<double>(count);
  double ss = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (all || mask[i]) ss += (h[i] - mean) * (h[i] - mean);
  if (!(ss > 0.0)) return {};
  const double inv = 1.0 / std::sqrt(ss);
  std::vector<float> out(g.size(), 0.0f);
  for (std::size_t i = 0; i < g.size(); ++i)
    if (all || mask[i]) out[i] = static_cast<float>((h[i] - mean) * inv);
  return out;
}

inline double dot(const std::vector<float>& a, const std::vector<float>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return s;
}

/// Sub-cell offset of the maximum of a 3x3 neighbourhood (row-major, centre at 4),
/// from a quadratic fit. Falls back to per-axis parabolas when the 2-D fit is not a
/// maximum or lands outside the neighbourhood.
inline Vec2 quadratic_peak(const double v[9], bool has_x, bool has_y) {
  const double gx = has_x ? 0.5 * (v[5] - v[3]) : 0.0;
  const double gy = has_y ? 0.5 * (v[7] - v[1]) : 0.0;
  const double hxx = has_x ? v[5] - 2.0 * v[4] + v[3] : -1.0;
  const double hyy = has_y ? v[7] - 2.0 * v[4] + v[1] : -1.0;
  const double hxy = has_x && has_y ? 0.25 * (v[8] - v[6] - v[2] + v[0]) : 0.0;
  const double det = hxx * hyy - hxy * hxy;
  if (hxx < 0.0 && det > 0.0) {
    const double dx = -(hyy * gx - hxy * gy) / det;
    const double dy = -(hxx * gy - hxy * gx) / det;
    if (std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0) return {dx, dy};
  }
  auto axis = [](double g, double h) { return h < 0.0 ? std::clamp(-g / h, -0.5, 0.5) : 0.0; };
  return {axis(gx, hxx), axis(gy, hyy)};
}

inline std::size_t argmax(const std::vector<double>& v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

/// Peak position on `grid` given correlations `c` (row-major over the grid).
inline std::pair<Vec2, double> peak_on_grid(const SearchGrid& grid, const std::vector<double>& c) {
  const std::size_t best = argmax(c);
  const std::size_t by = best / grid.nx;
  const std::size_t bx = best % grid.nx;
  const bool has_x = bx > 0 && bx + 1 < grid.nx;
  const bool has_y = by > 0 && by + 1 < grid.ny;
  double v[9];
  for (int dy = -1; dy <= 1; ++dy)
    for (int dx = -1; dx <= 1; ++dx) {
      const bool ok = (dx == 0 || has_x) && (dy == 0 || has_y);
      v[(dy + 1) * 3 + (dx + 1)] = ok ? c[(by + dy) * grid.nx + (bx + dx)] : c[best];
    }
  const Vec2 d = quadratic_peak(v, has_x, has_y);
  const Vec2 p = grid.at(by, bx);
  return {Vec2{p.x + d.x * grid.cell, p.y + d.y * grid.cell}, c[best]};
}

}  // namespace positions_detail

/// Simulated pattern at every candidate, correlated with the frame (on amplitudes);
/// returns the candidate maximizing the normalized cross-correlation, refined to sub-cell precision
/// by a quadratic fit over its 3x3 neighbourhood. A peak below `floor` (or a frame with
/// no contrast) is a NoMatch error.
inline Vec2 coarse_correct(const IntensityFrame& frame, const WaveField& model_object, Vec2 object_center,
                           const WaveField& model_probe, const SearchGrid& grid, const MaskGrid& mask = {},
                           double floor = 0.2) {
  using namespace positions_detail;
  if (grid.size() == 0) throw Error(ErrorKind::Range, "empty search grid");
  if (frame.ny() != model_probe.ny() || frame.nx() != model_probe.nx())
    throw Error(ErrorKind::Shape, "frame and model probe dimensions differ");
  const std::vector<float> f = standardized(frame.counts, mask);
  if (f.empty()) throw Error(ErrorKind::NoMatch, "frame has no contrast");
  std::vector<double> c(grid.size(), 0.0);
  parallel_for(grid.size(), [&](std::size_t i) {
    const RealGrid sim = expected_intensity(model_object, model_probe, grid.at(i / grid.nx, i % grid.nx), 1.0, object_center);
    const std::vector<float> s = standardized(sim, mask);
    c[i] = s.empty() ? 0.0 : dot(f, s);
  });
  const auto [pos, peak] = peak_on_grid(grid, c);
  if (!(peak >= floor)) throw Error(ErrorKind::NoMatch, "correlation peak below floor");
  return pos;
}

struct CoarseConfig {
  double cell_pixels = 4.0;   // lattice cell in reconstruction pixels
  double span_sigmas = 3.0;   // search half-width in units of the expected jitter
  Vec2 jitter_sigma{9.2e-6, 4.6e-6};  // expected (major, minor)
  double jitter_axis_angle = 0.0;
  double floor = 0.2;
};

/// Axis-aligned half-widths of the span_sigmas ellipse of the expected jitter.
inline Vec2 search_half_span(const CoarseConfig& cfg) {
  const double c = std::cos(cfg.jitter_axis_angle);
  const double s = std::sin(cfg.jitter_axis_angle);
  const double a = cfg.jitter_sigma.x;
  const double b = cfg.jitter_sigma.y;
  return {cfg.span_sigmas * std::sqrt(a * a * c * c + b * b * s * s), cfg.span_sigmas * std::sqrt(a * a * s * s + b * b * c * c)};
}

/// coarse_correct for every frame. Candidates live on one lattice anchored at the
/// object centre so frames with overlapping searches share simulations. Frames without a
/// match are flagged rejected_out_of_field; matched frames get `coarse` and keep their
/// status.
inline std::vector<PositionEstimate> coarse_correct_all(const FrameSet& frames, std::vector<PositionEstimate> estimates,
                                                        const WaveField& model_object, Vec2 object_center,
                                                        const WaveField& model_probe, const CoarseConfig& cfg = {}) {
  using namespace positions_detail;
  validate(frames);
  if (estimates.size() != frames.size()) throw Error(ErrorKind::Input, "frame and position counts differ");
  if (frames.ny() != model_probe.ny() || frames.nx() != model_probe.nx())
    throw Error(ErrorKind::Shape, "frame and model probe dimensions differ");
  const double cell = cfg.cell_pixels * model_object.pitch;
  const Vec2 half = search_half_span(cfg);
  const auto hx = static_cast<long>(std::ceil(half.x / cell - 1e-9));
  const auto hy = static_cast<long>(std::ceil(half.y / cell - 1e-9));

  // Lattice index range touched by any search.
  std::vector<long> cx(frames.size()), cy(frames.size());
  long lx = std::numeric_limits<long>::max(), ly = lx, ux = std::numeric_limits<long>::min(), uy = ux;
  for (std::size_t j = 0; j < frames.size(); ++j) {
    cx[j] = std::lround((estimates[j].nominal.x - object_center.x) / cell);
    cy[j] = std::lround((estimates[j].nominal.y - object_center.y) / cell);
    lx = std::min(lx, cx[j] - hx);
    ux = std::max(ux, cx[j] + hx);
    ly = std::min(ly, cy[j] - hy);
    uy = std::max(uy, cy[j] + hy);
  }
  const auto lnx = static_cast<std::size_t>(ux - lx + 1);
  const auto lny = static_cast<std::size_t>(uy - ly + 1);
  std::vector<unsigned char> needed(lnx * lny, 0);
  for (std::size_t j = 0; j < frames.size(); ++j)
    for (long y = cy[j] - hy; y <= cy[j] + hy; ++y)
      for (long x = cx[j] - hx; x <= cx[j] + hx; ++x) needed[static_cast<std::size_t>(y - ly) * lnx + static_cast<std::size_t>(x - lx)] = 1;

  auto lattice_pos = [&](long y, long x) {
    return Vec2{object_center.x + cell * static_cast<double>(x), object_center.y + cell * static_cast<double>(y)};
  };
  std::vector<std::vector<float>> sims(lnx * lny);
  parallel_for(sims.size(), [&](std::size_t i) {
    if (!needed[i]) return;
    const long y = ly + static_cast<long>(i / lnx);
    const long x = lx + static_cast<long>(i % lnx);
    const Window w = locate_window(lattice_pos(y, x), model_object, object_center, model_probe.ny(), model_probe.nx());
    if (!window_inside(w, model_object.ny(), model_object.nx()))
      throw Error(ErrorKind::OutOfField, "model object does not cover the search grid");
    sims[i] = standardized(expected_intensity(model_object, model_probe, lattice_pos(y, x), 1.0, object_center), frames.mask);
  });

  parallel_for(frames.size(), [&](std::size_t j) {
    PositionEstimate& e = estimates[j];
    const std::vector<float> f = standardized(frames.frames[j].counts, frames.mask);
    if (f.empty()) {
      e.coarse.reset();
      e.refined.reset();
      e.status = FrameStatus::RejectedOutOfField;
      return;
    }
    SearchGrid grid;
    grid.cell = cell;
    grid.nx = static_cast<std::size_t>(2 * hx + 1);
    grid.ny = static_cast<std::size_t>(2 * hy + 1);
    grid.origin = lattice_pos(cy[j] - hy, cx[j] - hx);
    std::vector<double> c(grid.size(), 0.0);
    for (std::size_t iy = 0; iy < grid.ny; ++iy)
      for (std::size_t ix = 0; ix < grid.nx; ++ix) {
        const std::size_t li = static_cast<std::size_t>(cy[j] - hy - ly + static_cast<long>(iy)) * lnx +
                               static_cast<std::size_t>(cx[j] - hx - lx + static_cast<long>(ix));
        c[iy * grid.nx + ix] = sims[li].empty() ? 0.0 : dot(f, sims[li]);
      }
    const auto [pos, peak] = peak_on_grid(grid, c);
    if (peak >= cfg.floor) {
      e.coarse = pos;
    } else {
      e.coarse.reset();
      e.refined.reset();
      e.status = FrameStatus::RejectedOutOfField;
    }
  });
  return estimates;
}

struct RefineConfig {
  std::size_t max_increases = 5;  // consecutive residual increases before a frame is dropped
  std::size_t backtracks = 4;
  // Scanned rectangle; when set, frames refined outside it dilated by `field_dilation`
  // are rejected as out of field.
  std::optional<std::pair<Vec2, Vec2>> field;
  double field_dilation = 0.2;
};

/// Per-frame history carried across refine_positions calls.
struct RefineTracker {
  std::vector<double> residual;
  std::vector<std::size_t> increases;
  std::vector<std::optional<Vec2>> start;
};

namespace positions_detail {

/// Spectral x and y derivatives (per pixel) of a periodic grid.
inline void spectral_gradient(const ComplexGrid& g, ComplexGrid& dx, ComplexGrid& dy) {
  const std::size_t ny = g.ny();
  const std::size_t nx = g.nx();
  ComplexGrid f = g;
  fft::forward_inplace(f);
  dx = f;
  dy = f;
  const double inv = 1.0 / static_cast<double>(g.size());
  const double two_pi = 2.0 * std::numbers::pi;
  for (std::size_t y = 0; y < ny; ++y) {
    const double ky = (ny % 2 == 0 && y == ny / 2) ? 0.0 : two_pi * fft::signed_frequency(y, ny) / static_cast<double>(ny);
    for (std::size_t x = 0; x < nx; ++x) {
      const double kx = (nx % 2 == 0 && x == nx / 2) ? 0.0 : two_pi * fft::signed_frequency(x, nx) / static_cast<double>(nx);
      dx(y, x) *= cplx(0.0, kx * inv);
      dy(y, x) *= cplx(0.0, ky * inv);
    }
  }
  fft::backward_inplace(dx);
  fft::backward_inplace(dy);
}

/// Far-field amplitude |F(O_patch P(u - frac))| of one frame at `position`.
inline bool model_amplitude(const ComplexGrid& object, Vec2 object_center, double pitch, const ComplexGrid& probe,
                            Vec2 position, RealGrid& amp, ComplexGrid* field = nullptr, ComplexGrid* exit = nullptr,
                            Window* window = nullptr) {
  const Window w = locate_window(position, object_center, pitch, object.ny(), object.nx(), probe.ny(), probe.nx());
  if (!window_inside(w, object.ny(), object.nx())) return false;
  ComplexGrid patch, disp;
  extract_window(object, w, patch);
  displace_probe(probe, w, disp);
  for (std::size_t i = 0; i < patch.size(); ++i) disp[i] *= patch[i];
  if (exit) *exit = disp;
  fft::centered_forward_inplace(disp);
  amp = RealGrid(disp.ny(), disp.nx());
  for (std::size_t i = 0; i < disp.size(); ++i) amp[i] = std::abs(disp[i]);
  if (field) *field = std::move(disp);
  if (window) *window = w;
  return true;
}

/// min over a >= 0 of sum_measured (a m - A)^2, with the minimizing a.
inline std::pair<double, double> scaled_residual(const RealGrid& m, const RealGrid& A, const FrameSet& frames) {
  double mm = 0.0, ma = 0.0, aa = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (!frames.measured(i)) continue;
    mm += m[i] * m[i];
    ma += m[i] * A[i];
    aa += A[i] * A[i];
  }
  const double a = mm > 0.0 ? std::max(ma / mm, 0.0) : 0.0;
  return {aa - 2.0 * a * ma + a * a * mm, a};
}

}  // namespace positions_detail

/// One refinement pass over the accepted frames of `state`. Each frame takes a damped
/// Gauss-Newton step on its amplitude residual min_a sum (a |F psi| - sqrt(I))^2 with
/// respect to its position; the position derivative of the exit wave comes from the
/// spectral gradient of the displaced probe, so it is exact for the model used by the
/// engine. Steps are clipped to `max_shift_px` pixels and backtracked until the residual
/// does not increase. Frames whose probe vanishes, whose residual grew in
/// `max_increases` consecutive passes or that drifted more than one field of view from
/// their first refined position are rejected as refinement failures; frames leaving the
/// object grid or the dilated scan field are rejected as out of field. Returns the
/// updated estimates; the state is not modified.
inline std::vector<PositionEstimate> refine_positions(const ReconState& state, const FrameSet& frames, double max_shift_px,
                                                      RefineTracker* tracker = nullptr, const RefineConfig& cfg = {}) {
  using namespace positions_detail;
  engine_detail::check_inputs(state, frames);
  if (!(max_shift_px > 0.0)) throw Error(ErrorKind::Range, "max_shift_per_iter must be positive");
  const std::size_t n = frames.size();
  const double pitch = state.object.pitch;
  const double fov = pitch * static_cast<double>(std::min(state.probe_ny(), state.probe_nx()));
  if (tracker) {
    tracker->residual.resize(n, -1.0);
    tracker->increases.resize(n, 0);
    tracker->start.resize(n);
  }
  std::vector<PositionEstimate> out = state.positions;
  const std::vector<RealGrid> amp = engine_detail::amplitudes(frames);

  parallel_for(n, [&](std::size_t j) {
    PositionEstimate& e = out[j];
    if (e.status != FrameStatus::Accepted) return;
    auto reject = [&](FrameStatus s) {
      e.status = s;
      e.refined.reset();
    };
    const WaveField probe = state.probe(j);
    if (!(probe.energy() > 0.0)) return reject(FrameStatus::RejectedRefinementFailed);
    const Vec2 p0 = e.best();
    RealGrid m;
    ComplexGrid field, exitw;
    Window w;
    if (!model_amplitude(state.object.values, state.object_center, pitch, probe.values, p0, m, &field, &exitw, &w))
      return reject(FrameStatus::RejectedOutOfField);
    const auto [r0, a] = scaled_residual(m, amp[j], frames);
    if (!(a > 0.0)) return reject(FrameStatus::RejectedRefinementFailed);

    if (tracker) {
      if (!tracker->start[j]) tracker->start[j] = p0;
      if (tracker->residual[j] >= 0.0 && r0 > tracker->residual[j])
        ++tracker->increases[j];
      else
        tracker->increases[j] = 0;
      tracker->residual[j] = r0;
      if (tracker->increases[j] >= cfg.max_increases) return reject(FrameStatus::RejectedRefinementFailed);
    }

    // d psi / d position (pixels) = -O_patch * grad(P displaced).
    ComplexGrid disp, gx, gy, patch;
    displace_probe(probe.values, w, disp);
    spectral_gradient(disp, gx, gy);
    extract_window(state.object.values, w, patch);
    for (std::size_t i = 0; i < patch.size(); ++i) {
      gx[i] *= -patch[i];
      gy[i] *= -patch[i];
    }
    fft::centered_forward_inplace(gx);
    fft::centered_forward_inplace(gy);
    // Jacobian columns of a|Phi| - A: d/dx, d/dy (scaled by a) and d/da.
    Eigen::Matrix3d H = Eigen::Matrix3d::Zero();
    Eigen::Vector3d g = Eigen::Vector3d::Zero();
    for (std::size_t i = 0; i < m.size(); ++i) {
      if (!frames.measured(i) || m[i] <= 0.0) continue;
      const cplx u = std::conj(field[i]) / m[i];
      const Eigen::Vector3d jv(a * (u * gx[i]).real(), a * (u * gy[i]).real(), m[i]);
      const double r = a * m[i] - amp[j][i];
      H.noalias() += jv * jv.transpose();
      g.noalias() += r * jv;
    }
    H.diagonal() *= 1.0 + 1e-3;
    H.diagonal().array() += 1e-12 * H.trace() + std::numeric_limits<double>::min();
    const Eigen::Vector3d step = -H.ldlt().solve(g);
    Vec2 d{step(0), step(1)};
    if (!std::isfinite(d.x) || !std::isfinite(d.y)) return reject(FrameStatus::RejectedRefinementFailed);
    const double len = std::hypot(d.x, d.y);
    if (len > max_shift_px) d = (max_shift_px / len) * d;

    Vec2 best = p0;
    for (std::size_t t = 0; t <= cfg.backtracks; ++t) {
      const Vec2 trial = p0 + pitch * d;
      RealGrid mt;
      if (model_amplitude(state.object.values, state.object_center, pitch, probe.values, trial, mt) &&
          scaled_residual(mt, amp[j], frames).first <= r0) {
        best = trial;
        break;
      }
      d = 0.5 * d;
    }

    if (tracker && tracker->start[j] && std::hypot(best.x - tracker->start[j]->x, best.y - tracker->start[j]->y) > fov)
      return reject(FrameStatus::RejectedRefinementFailed);
    if (cfg.field && !inside_dilated(best, cfg.field->first, cfg.field->second, cfg.field_dilation))
      return reject(FrameStatus::RejectedOutOfField);
    e.refined = best;
  });
  return out;
}

struct JitterStats {
  double axis_angle = 0.0;  // main axis, in (-pi/2, pi/2]
  double sigma_major = 0.0;
  double sigma_minor = 0.0;
};

/// Principal components of the (refined - nominal) displacements of accepted frames.
inline JitterStats jitter_statistics(const std::vector<PositionEstimate>& estimates) {
  std::vector<Vec2> d;
  for (const auto& e : estimates)
    if (e.status == FrameStatus::Accepted && e.refined) d.push_back(*e.refined - e.nominal);
  if (d.size() < 3) throw Error(ErrorKind::Input, "jitter statistics need at least 3 accepted estimates");
  Vec2 mean;
  for (const auto& v : d) mean = mean + v;
  mean = (1.0 / static_cast<double>(d.size())) * mean;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (const auto& v : d) {
    const Vec2 c = v - mean;
    sxx += c.x * c.x;
    syy += c.y * c.y;
    sxy += c.x * c.y;
  }
  const double inv = 1.0 / static_cast<double>(d.size() - 1);
  sxx *= inv;
  syy *= inv;
  sxy *= inv;
  JitterStats s;
  const double tr = 0.5 * (sxx + syy);
  const double disc = std::sqrt(0.25 * (sxx - syy) * (sxx - syy) + sxy * sxy);
  s.sigma_major = std::sqrt(std::max(tr + disc, 0.0));
  s.sigma_minor = std::sqrt(std::max(tr - disc, 0.0));
  if (disc > 0.0) s.axis_angle = 0.5 * std::atan2(2.0 * sxy, sxx - syy);
  if (s.axis_angle <= -0.5 * std::numbers::pi) s.axis_angle += std::numbers::pi;
  return s;
}

namespace positions_detail {

/// Probability that a Gaussian N(mean, [[sxx, sxy], [sxy, syy]]) falls inside the box
/// [lo, hi], by quadrature over x of the conditional normal in y.
inline double box_probability(Vec2 mean, double sxx, double syy, double sxy, Vec2 lo, Vec2 hi) {
  const double sx = std::sqrt(sxx);
  const double x0 = std::max(lo.x, mean.x - 8.0 * sx);
  const double x1 = std::min(hi.x, mean.x + 8.0 * sx);
  if (!(x1 > x0)) return 0.0;
  const double beta = sxy / sxx;
  const double sc = std::sqrt(std::max(syy - sxy * sxy / sxx, 1e-300));
  auto phi_cdf = [](double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); };
  constexpr int m = 128;  // Simpson panels (even)
  const double h = (x1 - x0) / m;
  double acc = 0.0;
  for (int i = 0; i <= m; ++i) {
    const double x = x0 + h * i;
    const double zx = (x - mean.x) / sx;
    const double my = mean.y + beta * (x - mean.x);
    const double f = std::exp(-0.5 * zx * zx) / (sx * std::sqrt(2.0 * std::numbers::pi)) *
                     (phi_cdf((hi.y - my) / sc) - phi_cdf((lo.y - my) / sc));
    acc += f * (i == 0 || i == m ? 1.0 : (i % 2 ? 4.0 : 2.0));
  }
  return acc * h / 3.0;
}

/// Plain Nelder-Mead minimization from `x0` with initial steps `step`.
template <typename F>
Eigen::VectorXd nelder_mead(F&& f, Eigen::VectorXd x0, const Eigen::VectorXd& step, int max_iter, double tol) {
  const Eigen::Index d = x0.size();
  std::vector<Eigen::VectorXd> pts(static_cast<std::size_t>(d + 1), x0);
  std::vector<double> val(pts.size());
  for (Eigen::Index i = 0; i < d; ++i) pts[static_cast<std::size_t>(i + 1)](i) += step(i);
  for (std::size_t i = 0; i < pts.size(); ++i) val[i] = f(pts[i]);
  std::vector<std::size_t> order(pts.size());
  for (int it = 0; it < max_iter; ++it) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return val[a] < val[b]; });
    const std::size_t best = order.front(), worst = order.back(), second = order[order.size() - 2];
    if (std::abs(val[worst] - val[best]) <= tol * (std::abs(val[best]) + tol)) break;
    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(d);
    for (std::size_t i = 0; i + 1 < order.size(); ++i) centroid += pts[order[i]];
    centroid /= static_cast<double>(d);
    const Eigen::VectorXd xr = centroid + (centroid - pts[worst]);
    const double fr = f(xr);
    if (fr < val[best]) {
      const Eigen::VectorXd xe = centroid + 2.0 * (centroid - pts[worst]);
      const double fe = f(xe);
      if (fe < fr) {
        pts[worst] = xe;
        val[worst] = fe;
      } else {
        pts[worst] = xr;
        val[worst] = fr;
      }
    } else if (fr < val[second]) {
      pts[worst] = xr;
      val[worst] = fr;
    } else {
      const Eigen::VectorXd xc = centroid + 0.5 * (pts[worst] - centroid);
      const double fc = f(xc);
      if (fc < val[worst]) {
        pts[worst] = xc;
        val[worst] = fc;
      } else {
        for (std::size_t i = 0; i < pts.size(); ++i) {
          if (i == best) continue;
          pts[i] = pts[best] + 0.5 * (pts[i] - pts[best]);
          val[i] = f(pts[i]);
        }
      }
    }
  }
  return pts[static_cast<std::size_t>(std::min_element(val.begin(), val.end()) - val.begin())];
}

}  // namespace positions_detail

/// Jitter statistics corrected for the acceptance field. Frames are only accepted when
/// their true position lies in the scanned rectangle [lo, hi] dilated by `dilation`, so
/// the accepted displacements are a truncated sample and their plain PCA underestimates
/// the spread along the axis the field clips. This fits a Gaussian (mean and full
/// covariance) by maximum likelihood with each accepted displacement truncated to its
/// own admissible box, the field shifted by the frame's nominal position.
inline JitterStats jitter_statistics_in_field(const std::vector<PositionEstimate>& estimates, Vec2 lo, Vec2 hi,
                                              double dilation) {
  using namespace positions_detail;
  const JitterStats start = jitter_statistics(estimates);
  if (!(start.sigma_major > 0.0)) return start;
  const Vec2 c{0.5 * (lo.x + hi.x), 0.5 * (lo.y + hi.y)};
  const Vec2 half{0.5 * (hi.x - lo.x) * (1.0 + dilation), 0.5 * (hi.y - lo.y) * (1.0 + dilation)};
  std::vector<Vec2> d, blo, bhi;
  for (const auto& e : estimates) {
    if (e.status != FrameStatus::Accepted || !e.refined) continue;
    d.push_back(*e.refined - e.nominal);
    blo.push_back(Vec2{c.x - half.x, c.y - half.y} - e.nominal);
    bhi.push_back(Vec2{c.x + half.x, c.y + half.y} - e.nominal);
  }
  const double unit = start.sigma_major;
  auto covariance = [&](const Eigen::VectorXd& t, double& sxx, double& syy, double& sxy) {
    const double a = std::exp(2.0 * t(2)), b = std::exp(2.0 * t(3));
    const double cs = std::cos(t(4)), sn = std::sin(t(4));
    sxx = a * cs * cs + b * sn * sn;
    syy = a * sn * sn + b * cs * cs;
    sxy = (a - b) * cs * sn;
  };
  auto nll = [&](const Eigen::VectorXd& t) {
    double sxx, syy, sxy;
    covariance(t, sxx, syy, sxy);
    const double det = sxx * syy - sxy * sxy;
    if (!(det > 0.0)) return std::numeric_limits<double>::infinity();
    const Vec2 mu{t(0), t(1)};
    double total = 0.0;
    for (std::size_t j = 0; j < d.size(); ++j) {
      const Vec2 r = (1.0 / unit) * d[j] - mu;
      const double q = (syy * r.x * r.x - 2.0 * sxy * r.x * r.y + sxx * r.y * r.y) / det;
      const double p = box_probability(mu, sxx, syy, sxy, (1.0 / unit) * blo[j], (1.0 / unit) * bhi[j]);
      if (!(p > 0.0)) return std::numeric_limits<double>::infinity();
      total += 0.5 * q + 0.5 * std::log(det) + std::log(p);
    }
    return total;
  };
  Vec2 mean;
  for (const auto& v : d) mean = mean + v;
  mean = (1.0 / static_cast<double>(d.size())) * mean;
  Eigen::VectorXd t0(5);
  t0 << mean.x / unit, mean.y / unit, 0.0, std::log(std::max(start.sigma_minor / unit, 1e-6)), start.axis_angle;
  Eigen::VectorXd step(5);
  step << 0.1, 0.1, 0.1, 0.1, 0.1;
  const Eigen::VectorXd t = nelder_mead(nll, t0, step, 2000, 1e-10);
  double sxx, syy, sxy;
  covariance(t, sxx, syy, sxy);
  const double tr = 0.5 * (sxx + syy);
  const double disc = std::sqrt(0.25 * (sxx - syy) * (sxx - syy) + sxy * sxy);
  JitterStats s;
  s.sigma_major = unit * std::sqrt(std::max(tr + disc, 0.0));
  s.sigma_minor = unit * std::sqrt(std::max(tr - disc, 0.0));
  s.axis_angle = disc > 0.0 ? 0.5 * std::atan2(2.0 * sxy, sxx - syy) : 0.0;
  if (s.axis_angle <= -0.5 * std::numbers::pi) s.axis_angle += std::numbers::pi;
  return s;
}

}  // namespace pulseprobe
