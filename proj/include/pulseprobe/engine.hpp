#pragma once

#ifndef EIGEN_DONT_PARALLELIZE
#define EIGEN_DONT_PARALLELIZE
#endif
#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "pulseprobe/error.hpp"
#include "pulseprobe/fft.hpp"
#include "pulseprobe/frameset.hpp"
#include "pulseprobe/opr.hpp"
#include "pulseprobe/parallel.hpp"
#include "pulseprobe/propagation.hpp"
#include "pulseprobe/rng.hpp"
#include "pulseprobe/wavefield.hpp"
#include "pulseprobe/window.hpp"

namespace pulseprobe {

struct EngineConfig {
  std::size_t rank = 10;
  std::size_t dm_iterations = 200;
  std::size_t ml_iterations = 800;
  std::size_t inner_loops = 3;
  std::size_t probe_start = 2;      // first DM iteration (0-based) that updates probes
  std::size_t variation_start = 20;  // DM runs with a single shared probe before this iteration
  std::size_t snapshot_every = 0;   // 0 disables snapshots
  std::size_t object_margin = 16;   // extra object pixels around the scanned area
  double object_eps = 1e-4;         // relative to the max of the denominator map
  double probe_eps = 1e-4;
  double coefficient_eps = 1e-4;   // relative to the largest per-frame Gram trace
  double ml_armijo = 1e-4;
  std::size_t ml_max_halvings = 20;
  std::uint64_t seed = 1;
};

/// Reconstruction state. Probe j is sum_i M_i conj(Vhat(j, i)); frames whose position
/// status is not accepted take no part in any update.
struct ReconState {
  WaveField object;
  Vec2 object_center;
  EigenBasis basis;
  std::vector<PositionEstimate> positions;
  std::vector<ComplexGrid> exit_waves;
  std::vector<double> errors;
  std::size_t iteration = 0;
  std::size_t dm_iterations = 0;
  bool ml_converged = false;

  std::size_t frame_count() const { return positions.size(); }
  std::size_t probe_ny() const { return basis.ny; }
  std::size_t probe_nx() const { return basis.nx; }
  WaveField probe(std::size_t j) const { return basis.probe(j); }
};

namespace engine_detail {

inline Eigen::Index idx(std::size_t i) { return static_cast<Eigen::Index>(i); }

inline bool active(const ReconState& s, std::size_t j) { return s.positions[j].status == FrameStatus::Accepted; }

inline std::vector<Window> windows(const ReconState& s, bool nearest_pixel = false) {
  std::vector<Window> w(s.frame_count());
  for (std::size_t j = 0; j < w.size(); ++j) {
    w[j] = locate_window(s.positions[j].best(), s.object, s.object_center, s.probe_ny(), s.probe_nx());
    if (nearest_pixel) w[j] = round_window(w[j]);
    if (active(s, j) && !window_inside(w[j], s.object.ny(), s.object.nx()))
      throw Error(ErrorKind::OutOfField, "frame " + std::to_string(s.positions[j].frame_index) + " lies outside the object grid");
  }
  return w;
}

inline std::vector<RealGrid> amplitudes(const FrameSet& frames) {
  std::vector<RealGrid> a(frames.size());
  parallel_for(frames.size(), [&](std::size_t j) {
    a[j] = frames.frames[j].counts;
    for (auto& v : a[j]) v = std::sqrt(std::max(v, 0.0));
  });
  return a;
}

inline void probe_into(const Eigen::MatrixXcd& M, const Eigen::MatrixXcd& C, std::size_t j, ComplexGrid& out,
                       std::size_t ny, std::size_t nx) {
  if (out.ny() != ny || out.nx() != nx) out = ComplexGrid(ny, nx);
  Eigen::Map<Eigen::VectorXcd> v(out.data(), idx(out.size()));
  v.noalias() = M * C.row(idx(j)).transpose();
}

inline void check_inputs(const ReconState& s, const FrameSet& frames) {
  validate(frames);
  if (frames.size() != s.frame_count() || s.basis.count() != s.frame_count())
    throw Error(ErrorKind::Input, "frame, position and coefficient counts differ");
  if (frames.ny() != s.probe_ny() || frames.nx() != s.probe_nx()) throw Error(ErrorKind::Shape, "frame and probe dimensions differ");
}

/// Sum over measured pixels of (|Phi| - a)^2; Phi is in the centred Fourier domain.
inline double fourier_error(const ComplexGrid& phi, const RealGrid& amp, const FrameSet& frames) {
  double e = 0.0;
  for (std::size_t i = 0; i < phi.size(); ++i) {
    if (!frames.measured(i)) continue;
    const double d = std::abs(phi[i]) - amp[i];
    e += d * d;
  }
  return e;
}

inline bool finite(const Eigen::MatrixXcd& m) { return m.allFinite(); }

}  // namespace engine_detail

/// Initial state: object of unit transmission covering every frame window (plus a
/// margin), probe = inverse FFT of sqrt(mean frame) with zero phase, shared by all
/// frames as a rank-1 basis.
inline ReconState init_state(const FrameSet& frames, const std::vector<PositionEstimate>& positions, const Geometry& g,
                             const EngineConfig& cfg = {}) {
  if (frames.empty()) throw Error(ErrorKind::Input, "cannot initialise from an empty frame set");
  validate(frames);
  if (positions.size() != frames.size()) throw Error(ErrorKind::Input, "frame and position counts differ");
  if (frames.ny() % 2 != 0 || frames.nx() % 2 != 0) throw Error(ErrorKind::Shape, "frame dimensions must be even");
  Geometry gg = g;
  gg.grid_n = frames.nx();
  const double pitch = recon_pixel_size(gg);
  const std::size_t ny = frames.ny();
  const std::size_t nx = frames.nx();

  ReconState s;
  s.positions = positions;

  Vec2 lo{1e300, 1e300}, hi{-1e300, -1e300};
  for (const auto& p : positions) {
    const Vec2 b = p.best();
    lo = {std::min(lo.x, b.x), std::min(lo.y, b.y)};
    hi = {std::max(hi.x, b.x), std::max(hi.y, b.y)};
  }
  s.object_center = {pitch * std::round(0.5 * (lo.x + hi.x) / pitch), pitch * std::round(0.5 * (lo.y + hi.y) / pitch)};
  auto span = [&](double half, std::size_t n) {
    const double need = half / pitch + 0.5 * static_cast<double>(n) + static_cast<double>(cfg.object_margin) + 1.0;
    return 2 * static_cast<std::size_t>(std::ceil(need));
  };
  s.object = make_field(span(0.5 * (hi.y - lo.y), ny), span(0.5 * (hi.x - lo.x), nx), pitch, g.wavelength, 1.0);

  RealGrid mean(ny, nx, 0.0);
  for (const auto& f : frames.frames)
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += f.counts[i];
  ComplexGrid p(ny, nx);
  const double inv_n = 1.0 / static_cast<double>(frames.size());
  for (std::size_t i = 0; i < mean.size(); ++i)
    p[i] = frames.measured(i) ? std::sqrt(std::max(mean[i] * inv_n, 0.0)) : 0.0;
  fft::centered_backward_inplace(p);

  const auto n = frames.size();
  const double rn = std::sqrt(static_cast<double>(n));
  s.basis.ny = ny;
  s.basis.nx = nx;
  s.basis.pitch = pitch;
  s.basis.wavelength = g.wavelength;
  s.basis.M.resize(engine_detail::idx(ny * nx), 1);
  for (std::size_t i = 0; i < p.size(); ++i) s.basis.M(engine_detail::idx(i), 0) = rn * p[i];
  s.basis.Vhat = Eigen::MatrixXcd::Constant(engine_detail::idx(n), 1, cplx(1.0 / rn, 0.0));
  s.basis.sigma = Eigen::VectorXd::Constant(1, s.basis.M.col(0).norm());
  return s;
}

/// Builds a state from known object and probes (tests, model-based initialisation).
inline ReconState state_from_truth(const WaveField& object, Vec2 object_center, const std::vector<WaveField>& probes,
                                   const std::vector<PositionEstimate>& positions, std::size_t k) {
  ReconState s;
  s.object = object;
  s.object_center = object_center;
  s.positions = positions;
  s.basis = svd_truncate(make_stack(probes), k);
  return s;
}

namespace engine_detail {

/// Probe-frame probes and their window-frame displaced copies for every active frame.
inline void make_probes(const ReconState& s, const std::vector<Window>& win, const Eigen::MatrixXcd& M,
                        const Eigen::MatrixXcd& C, std::vector<ComplexGrid>& probes, std::vector<ComplexGrid>& disp) {
  const std::size_t n = s.frame_count();
  probes.resize(n);
  disp.resize(n);
  parallel_for(n, [&](std::size_t j) {
    if (!active(s, j)) return;
    probe_into(M, C, j, probes[j], s.probe_ny(), s.probe_nx());
    displace_probe(probes[j], win[j], disp[j]);
  });
}

inline void make_patches(const ReconState& s, const ComplexGrid& object, const std::vector<Window>& win,
                         std::vector<ComplexGrid>& patches) {
  patches.resize(s.frame_count());
  parallel_for(s.frame_count(), [&](std::size_t j) {
    if (active(s, j)) extract_window(object, win[j], patches[j]);
  });
}

/// Seeds extra rank with zero components and small random coefficients, or drops
/// trailing ones, so that M and C have exactly k columns.
inline void resize_rank(Eigen::MatrixXcd& M, Eigen::MatrixXcd& C, std::size_t k, std::uint64_t seed, std::size_t salt) {
  const Eigen::Index old = M.cols();
  if (old == idx(k)) return;
  M.conservativeResize(Eigen::NoChange, idx(k));
  C.conservativeResize(Eigen::NoChange, idx(k));
  if (old > idx(k)) return;
  M.rightCols(idx(k) - old).setZero();
  auto rng = make_rng(seed, salt, Stream::Seeding);
  std::normal_distribution<double> nd(0.0, 1.0);
  double scale = 0.0;
  for (Eigen::Index j = 0; j < C.rows(); ++j) scale = std::max(scale, C.row(j).leftCols(old).norm());
  for (Eigen::Index c = old; c < idx(k); ++c)
    for (Eigen::Index j = 0; j < C.rows(); ++j) C(j, c) = 1e-3 * scale * cplx(nd(rng), nd(rng));
}

}  // namespace engine_detail

/// One difference-map iteration with per-frame probes kept in the rank-k subspace.
/// Windows are snapped to the nearest pixel: with sub-pixel probe shifts the per-pixel
/// probe solve only approximates the coupled problem and DM, lacking any descent
/// safeguard, can diverge next to sharp opaque edges. Sub-pixel accuracy is recovered
/// by ml_refine, which uses the exact model. On a numeric failure the state is left
/// unchanged.
inline void dm_iterate(ReconState& state, const FrameSet& frames, const EngineConfig& cfg = {}) {
  using namespace engine_detail;
  check_inputs(state, frames);
  const std::size_t n = frames.size();
  const std::size_t ny = state.probe_ny();
  const std::size_t nx = state.probe_nx();
  const std::size_t npix = ny * nx;
  if (cfg.rank < 1) throw Error(ErrorKind::Rank, "rank must be >= 1");
  const std::size_t k = state.iteration < cfg.variation_start ? 1 : std::min(cfg.rank, n);
  const std::vector<Window> win = windows(state, true);
  const std::vector<RealGrid> amp = amplitudes(frames);

  // Working factors: P_j = M C(j, :)^T.
  Eigen::MatrixXcd M = state.basis.M;
  Eigen::MatrixXcd C = state.basis.Vhat.conjugate();
  resize_rank(M, C, k, cfg.seed, state.iteration);

  ComplexGrid object = state.object.values;
  std::vector<ComplexGrid> probes, disp, patches;
  make_probes(state, win, M, C, probes, disp);
  make_patches(state, object, win, patches);

  std::vector<ComplexGrid> psi = state.exit_waves;
  if (psi.size() != n) {
    psi.assign(n, ComplexGrid());
    parallel_for(n, [&](std::size_t j) {
      if (!active(state, j)) return;
      psi[j] = patches[j];
      for (std::size_t i = 0; i < npix; ++i) psi[j][i] *= disp[j][i];
    });
  }

  // Fourier step: psi += F^-1 Pi(F(2 ex - psi)) - ex with ex = P_j O_j.
  std::vector<double> err(n, 0.0);
  parallel_for(n, [&](std::size_t j) {
    if (!active(state, j)) return;
    ComplexGrid ex = patches[j];
    for (std::size_t i = 0; i < npix; ++i) ex[i] *= disp[j][i];
    ComplexGrid fex = ex;
    fft::centered_forward_inplace(fex);
    err[j] = fourier_error(fex, amp[j], frames);
    ComplexGrid t(ny, nx);
    for (std::size_t i = 0; i < npix; ++i) t[i] = 2.0 * ex[i] - psi[j][i];
    fft::centered_forward_inplace(t);
    for (std::size_t i = 0; i < npix; ++i) {
      if (!frames.measured(i)) continue;
      const double m = std::abs(t[i]);
      t[i] = m > 0.0 ? t[i] * (amp[j][i] / m) : cplx(amp[j][i], 0.0);
    }
    fft::centered_backward_inplace(t);
    for (std::size_t i = 0; i < npix; ++i) psi[j][i] += t[i] - ex[i];
  });
  double error = 0.0;
  for (double e : err) error += e;

  for (std::size_t loop = 0; loop < cfg.inner_loops; ++loop) {
    // Object: O = (eps O_old + sum conj(P) psi) / (sum |P|^2 + eps).
    ComplexGrid numer(object.ny(), object.nx());
    RealGrid denom(object.ny(), object.nx(), 0.0);
    ComplexGrid cp(ny, nx);
    RealGrid p2(ny, nx);
    for (std::size_t j = 0; j < n; ++j) {
      if (!active(state, j)) continue;
      for (std::size_t i = 0; i < npix; ++i) {
        cp[i] = std::conj(disp[j][i]) * psi[j][i];
        p2[i] = std::norm(disp[j][i]);
      }
      add_window(numer, cp, win[j]);
      add_window(denom, p2, win[j]);
    }
    const double dmax = *std::max_element(denom.begin(), denom.end());
    const double eps = cfg.object_eps * dmax + 1e-300;
    for (std::size_t i = 0; i < object.size(); ++i) object[i] = (eps * object[i] + numer[i]) / (denom[i] + eps);
    make_patches(state, object, win, patches);

    if (state.iteration < cfg.probe_start) continue;

    // Probe-frame targets u_j = D_j^* (conj(O_j) psi_j) and weights |O_j|^2.
    std::vector<ComplexGrid> target(n);
    std::vector<RealGrid> weight(n);
    parallel_for(n, [&](std::size_t j) {
      if (!active(state, j)) return;
      target[j] = ComplexGrid(ny, nx);
      weight[j] = RealGrid(ny, nx);
      for (std::size_t i = 0; i < npix; ++i) {
        target[j][i] = std::conj(patches[j][i]) * (psi[j][i] - patches[j][i] * disp[j][i]);
        weight[j][i] = std::norm(patches[j][i]);
      }
      undisplace_inplace(target[j], win[j]);
      for (std::size_t i = 0; i < npix; ++i) target[j][i] += weight[j][i] * probes[j][i];
    });

    // Components, per pixel: (A + eps I) m = b + eps m_old with
    // A = sum_j |O_j|^2 conj(c_j) c_j^T and b = sum_j u_j conj(c_j).
    std::vector<double> cnorm(n);
    for (std::size_t j = 0; j < n; ++j) cnorm[j] = active(state, j) ? C.row(idx(j)).squaredNorm() : 0.0;
    std::vector<double> trace(npix, 0.0);
    parallel_for(ny, [&](std::size_t y) {
      for (std::size_t x = 0; x < nx; ++x) {
        const std::size_t r = y * nx + x;
        double t = 0.0;
        for (std::size_t j = 0; j < n; ++j)
          if (cnorm[j] > 0.0) t += weight[j][r] * cnorm[j];
        trace[r] = t;
      }
    });
    const double peps = cfg.probe_eps * *std::max_element(trace.begin(), trace.end()) + 1e-300;
    const Eigen::MatrixXcd Cc = C.conjugate();
    parallel_for(ny, [&](std::size_t y) {
      Eigen::MatrixXcd A(idx(k), idx(k));
      Eigen::VectorXcd b(idx(k));
      for (std::size_t x = 0; x < nx; ++x) {
        const std::size_t r = y * nx + x;
        A.setZero();
        b.setZero();
        for (std::size_t j = 0; j < n; ++j) {
          if (cnorm[j] == 0.0) continue;
          const auto cj = Cc.row(idx(j));
          const double w = weight[j][r];
          if (w != 0.0) A.noalias() += w * (cj.transpose() * C.row(idx(j)));
          b.noalias() += target[j][r] * cj.transpose();
        }
        A.diagonal().array() += peps;
        b.noalias() += peps * M.row(idx(r)).transpose();
        M.row(idx(r)) = A.ldlt().solve(b).transpose();
      }
    });

    // Coefficients, per frame: (G + eps I) c = h + eps c_old with
    // G_il = sum |O_j|^2 conj(M_i) M_l and h_i = sum conj(M_i) u_j.
    std::vector<double> gtrace(n, 0.0);
    std::vector<Eigen::MatrixXcd> G(n);
    std::vector<Eigen::VectorXcd> h(n);
    parallel_for(n, [&](std::size_t j) {
      if (!active(state, j)) return;
      const Eigen::Map<const Eigen::VectorXd> w(weight[j].data(), idx(npix));
      const Eigen::Map<const Eigen::VectorXcd> u(target[j].data(), idx(npix));
      G[j] = M.adjoint() * w.asDiagonal() * M;
      h[j] = M.adjoint() * u;
      gtrace[j] = G[j].trace().real();
    });
    const double gmax = *std::max_element(gtrace.begin(), gtrace.end());
    parallel_for(n, [&](std::size_t j) {
      if (!active(state, j)) return;
      const double ce = cfg.coefficient_eps * gmax + 1e-300;
      Eigen::MatrixXcd Gj = G[j];
      Gj.diagonal().array() += ce;
      const Eigen::VectorXcd rhs = h[j] + ce * C.row(idx(j)).transpose();
      C.row(idx(j)) = Gj.ldlt().solve(rhs).transpose();
    });
    make_probes(state, win, M, C, probes, disp);
  }

  EigenBasis basis = svd_truncate_factored(M, C, k, state.basis);
  bool ok = std::isfinite(error) && all_finite(object) && finite(basis.M) && finite(basis.Vhat);
  for (std::size_t j = 0; ok && j < n; ++j) ok = all_finite(psi[j]);
  if (!ok) throw Error(ErrorKind::Numeric, "non-finite difference-map update at iteration " + std::to_string(state.iteration));

  state.object.values = std::move(object);
  state.basis = std::move(basis);
  state.exit_waves = std::move(psi);
  state.errors.push_back(error);
  ++state.iteration;
  ++state.dm_iterations;
}

/// Amplitude-Gaussian negative log-likelihood L = sum_j sum_px (|F psi_j| - sqrt(I_j))^2
/// and its gradients. Convention: for a complex variable z, dL = 2 Re <g_z, dz>.
struct MlGradient {
  double value = 0.0;
  ComplexGrid object;      // g_O
  Eigen::MatrixXcd coeff;  // g_C (N x k), C = conj(Vhat)
  Eigen::MatrixXcd comps;  // g_M (npix x k)
};

namespace engine_detail {

struct MlEval {
  double value = 0.0;
  std::vector<ComplexGrid> patches;
  std::vector<ComplexGrid> probes;
  std::vector<ComplexGrid> disp;
  std::vector<ComplexGrid> phi;  // F(psi)
};

inline void ml_forward(const ReconState& s, const FrameSet& frames, const std::vector<RealGrid>& amp,
                       const std::vector<Window>& win, const Eigen::MatrixXcd& M, const Eigen::MatrixXcd& C, MlEval& ev) {
  const std::size_t n = s.frame_count();
  make_probes(s, win, M, C, ev.probes, ev.disp);
  ev.phi.resize(n);
  std::vector<double> err(n, 0.0);
  parallel_for(n, [&](std::size_t j) {
    if (!active(s, j)) return;
    ev.phi[j] = ev.patches[j];
    for (std::size_t i = 0; i < ev.phi[j].size(); ++i) ev.phi[j][i] *= ev.disp[j][i];
    fft::centered_forward_inplace(ev.phi[j]);
    err[j] = fourier_error(ev.phi[j], amp[j], frames);
  });
  ev.value = 0.0;
  for (double e : err) ev.value += e;
}

/// chi_j = F^-1[mask (Phi - a Phi / |Phi|)]: gradient with respect to psi_j.
inline std::vector<ComplexGrid> ml_chi(const ReconState& s, const FrameSet& frames, const std::vector<RealGrid>& amp,
                                       const MlEval& ev) {
  std::vector<ComplexGrid> chi(s.frame_count());
  parallel_for(s.frame_count(), [&](std::size_t j) {
    if (!active(s, j)) return;
    chi[j] = ev.phi[j];
    for (std::size_t i = 0; i < chi[j].size(); ++i) {
      if (!frames.measured(i)) {
        chi[j][i] = 0.0;
        continue;
      }
      const double m = std::abs(chi[j][i]);
      chi[j][i] = m > 0.0 ? chi[j][i] * (1.0 - amp[j][i] / m) : cplx(0.0);
    }
    fft::centered_backward_inplace(chi[j]);
  });
  return chi;
}

inline ComplexGrid ml_object_gradient(const ReconState& s, const std::vector<Window>& win, const MlEval& ev,
                                      const std::vector<ComplexGrid>& chi) {
  ComplexGrid g(s.object.ny(), s.object.nx());
  ComplexGrid part(s.probe_ny(), s.probe_nx());
  for (std::size_t j = 0; j < s.frame_count(); ++j) {
    if (!active(s, j)) continue;
    for (std::size_t i = 0; i < part.size(); ++i) part[i] = std::conj(ev.disp[j][i]) * chi[j][i];
    add_window(g, part, win[j]);
  }
  return g;
}

/// Probe-frame gradients D_j^*(conj(O_j) chi_j) stacked as columns (npix x N).
inline Eigen::MatrixXcd ml_probe_gradients(const ReconState& s, const std::vector<Window>& win, const MlEval& ev,
                                           const std::vector<ComplexGrid>& chi) {
  const std::size_t n = s.frame_count();
  const std::size_t npix = s.probe_ny() * s.probe_nx();
  Eigen::MatrixXcd gp = Eigen::MatrixXcd::Zero(idx(npix), idx(n));
  parallel_for(n, [&](std::size_t j) {
    if (!active(s, j)) return;
    ComplexGrid t(s.probe_ny(), s.probe_nx());
    for (std::size_t i = 0; i < npix; ++i) t[i] = std::conj(ev.patches[j][i]) * chi[j][i];
    undisplace_inplace(t, win[j]);
    for (std::size_t i = 0; i < npix; ++i) gp(idx(i), idx(j)) = t[i];
  });
  return gp;
}

inline double re_inner(const ComplexGrid& a, const ComplexGrid& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (std::conj(a[i]) * b[i]).real();
  return s;
}

inline double re_inner(const Eigen::MatrixXcd& a, const Eigen::MatrixXcd& b) {
  return (a.conjugate().cwiseProduct(b)).sum().real();
}

}  // namespace engine_detail

/// Likelihood and gradients for the current object and factors.
inline MlGradient ml_gradient(const ReconState& state, const FrameSet& frames) {
  using namespace engine_detail;
  check_inputs(state, frames);
  const auto win = windows(state);
  const auto amp = amplitudes(frames);
  const Eigen::MatrixXcd& M = state.basis.M;
  const Eigen::MatrixXcd C = state.basis.Vhat.conjugate();
  MlEval ev;
  make_patches(state, state.object.values, win, ev.patches);
  ml_forward(state, frames, amp, win, M, C, ev);
  const auto chi = ml_chi(state, frames, amp, ev);
  MlGradient g;
  g.value = ev.value;
  g.object = ml_object_gradient(state, win, ev, chi);
  const Eigen::MatrixXcd gp = ml_probe_gradients(state, win, ev, chi);
  g.coeff = (M.adjoint() * gp).transpose();
  g.comps = gp * C.conjugate();
  return g;
}

inline double ml_objective(const ReconState& state, const FrameSet& frames) {
  using namespace engine_detail;
  check_inputs(state, frames);
  const auto win = windows(state);
  const auto amp = amplitudes(frames);
  MlEval ev;
  make_patches(state, state.object.values, win, ev.patches);
  ml_forward(state, frames, amp, win, state.basis.M, state.basis.Vhat.conjugate(), ev);
  return ev.value;
}

/// Preconditioned gradient descent on the amplitude likelihood. Each iteration takes an
/// (object, coefficients) step with the components fixed, then a components step, both
/// with Armijo backtracking, and re-canonicalises the basis by truncated SVD. The
/// recorded likelihood never increases; when neither step makes progress within
/// `ml_max_halvings` halvings the state is flagged converged and iteration stops.
inline void ml_refine(ReconState& state, const FrameSet& frames, std::size_t iters, const EngineConfig& cfg = {}) {
  using namespace engine_detail;
  check_inputs(state, frames);
  const std::size_t n = frames.size();
  const std::size_t npix = state.probe_ny() * state.probe_nx();
  const std::size_t k = state.basis.rank();
  const auto win = windows(state);
  const auto amp = amplitudes(frames);
  state.ml_converged = false;

  Eigen::MatrixXcd M = state.basis.M;
  Eigen::MatrixXcd C = state.basis.Vhat.conjugate();
  ComplexGrid object = state.object.values;
  const bool had_ml = state.errors.size() > state.dm_iterations;
  double last = had_ml ? state.errors.back() : std::numeric_limits<double>::infinity();

  for (std::size_t it = 0; it < iters; ++it) {
    MlEval ev;
    make_patches(state, object, win, ev.patches);
    ml_forward(state, frames, amp, win, M, C, ev);
    double bound = std::min(ev.value, last);
    bool progress = false;

    // Step A: object and coefficients with the components fixed.
    {
      const auto chi = ml_chi(state, frames, amp, ev);
      const ComplexGrid gO = ml_object_gradient(state, win, ev, chi);
      const Eigen::MatrixXcd gp = ml_probe_gradients(state, win, ev, chi);
      const Eigen::MatrixXcd gC = (M.adjoint() * gp).transpose();

      RealGrid dO(object.ny(), object.nx(), 0.0);
      RealGrid p2(state.probe_ny(), state.probe_nx());
      for (std::size_t j = 0; j < n; ++j) {
        if (!active(state, j)) continue;
        for (std::size_t i = 0; i < npix; ++i) p2[i] = std::norm(ev.disp[j][i]);
        add_window(dO, p2, win[j]);
      }
      const double oeps = cfg.object_eps * *std::max_element(dO.begin(), dO.end()) + 1e-300;
      ComplexGrid stepO(object.ny(), object.nx());
      for (std::size_t i = 0; i < object.size(); ++i) stepO[i] = -gO[i] / (dO[i] + oeps);

      Eigen::MatrixXd dC = Eigen::MatrixXd::Zero(idx(n), idx(k));
      const Eigen::MatrixXd m2 = M.cwiseAbs2();
      parallel_for(n, [&](std::size_t j) {
        if (!active(state, j)) return;
        Eigen::VectorXd w(idx(npix));
        for (std::size_t i = 0; i < npix; ++i) w(idx(i)) = std::norm(ev.patches[j][i]);
        dC.row(idx(j)) = (m2.transpose() * w).transpose();
      });
      const double ceps = cfg.probe_eps * dC.maxCoeff() + 1e-300;
      const Eigen::MatrixXcd stepC = -(gC.array() / (dC.array() + ceps)).matrix();
      const double slope = 2.0 * (re_inner(gO, stepO) + re_inner(gC, stepC));

      if (slope < 0.0) {
        double t = 1.0;
        for (std::size_t h = 0; h <= cfg.ml_max_halvings; ++h, t *= 0.5) {
          ComplexGrid trialO = object;
          for (std::size_t i = 0; i < object.size(); ++i) trialO[i] += t * stepO[i];
          const Eigen::MatrixXcd trialC = C + t * stepC;
          MlEval tev;
          make_patches(state, trialO, win, tev.patches);
          ml_forward(state, frames, amp, win, M, trialC, tev);
          if (std::isfinite(tev.value) && tev.value <= bound + cfg.ml_armijo * t * slope) {
            object = std::move(trialO);
            C = trialC;
            ev = std::move(tev);
            bound = ev.value;
            progress = true;
            break;
          }
        }
      }
    }

    // Step B: components.
    {
      const auto chi = ml_chi(state, frames, amp, ev);
      const Eigen::MatrixXcd gp = ml_probe_gradients(state, win, ev, chi);
      const Eigen::MatrixXcd gM = gp * C.conjugate();
      Eigen::MatrixXd wsum = Eigen::MatrixXd::Zero(idx(npix), idx(n));
      parallel_for(n, [&](std::size_t j) {
        if (!active(state, j)) return;
        for (std::size_t i = 0; i < npix; ++i) wsum(idx(i), idx(j)) = std::norm(ev.patches[j][i]);
      });
      const Eigen::MatrixXd dM = wsum * C.cwiseAbs2();
      const double meps = cfg.probe_eps * dM.maxCoeff() + 1e-300;
      const Eigen::MatrixXcd stepM = -(gM.array() / (dM.array() + meps)).matrix();
      const double slope = 2.0 * re_inner(gM, stepM);
      if (slope < 0.0) {
        double t = 1.0;
        for (std::size_t h = 0; h <= cfg.ml_max_halvings; ++h, t *= 0.5) {
          const Eigen::MatrixXcd trialM = M + t * stepM;
          MlEval tev;
          tev.patches = ev.patches;
          ml_forward(state, frames, amp, win, trialM, C, tev);
          if (std::isfinite(tev.value) && tev.value <= bound + cfg.ml_armijo * t * slope) {
            M = trialM;
            ev = std::move(tev);
            bound = ev.value;
            progress = true;
            break;
          }
        }
      }
    }

    if (!progress) {
      state.ml_converged = true;
      break;
    }
    EigenBasis basis = svd_truncate_factored(M, C, k, state.basis);
    if (!all_finite(object) || !finite(basis.M) || !finite(basis.Vhat))
      throw Error(ErrorKind::Numeric, "non-finite maximum-likelihood update");
    M = basis.M;
    C = basis.Vhat.conjugate();
    state.basis = std::move(basis);
    state.object.values = object;
    state.errors.push_back(bound);
    last = bound;
    ++state.iteration;
  }
}

}  // namespace pulseprobe
