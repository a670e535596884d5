#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include <Eigen/Dense>

#include "pulseprobe/analysis.hpp"
#include "pulseprobe/engine.hpp"
#include "pulseprobe/error.hpp"
#include "pulseprobe/window.hpp"

namespace pulseprobe {

// A reconstruction is only defined up to a family of data-invariant transforms:
// global phase, the object x probe scale, an exponential ramp exp(a.r) traded between
// object, probes and per-frame energies, a global translation and the conjugate flip.
// The helpers below remove them before comparing with a known truth.

/// e^{i phi} b closest to a in the least-squares sense.
inline ComplexGrid align_global_phase(const ComplexGrid& a, const ComplexGrid& b) {
  if (!a.same_shape(b)) throw Error(ErrorKind::Shape, "fields differ in shape");
  cplx s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::conj(b[i]) * a[i];
  const cplx rot = std::abs(s) > 0.0 ? s / std::abs(s) : cplx(1.0);
  ComplexGrid out = b;
  for (auto& v : out) v *= rot;
  return out;
}

/// Pearson correlation of two equally long samples.
inline double correlation(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) throw Error(ErrorKind::Input, "correlation needs two equal samples");
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (!(saa > 0.0) || !(sbb > 0.0)) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

/// Summed displaced probe intensity of the accepted frames on the object grid.
inline RealGrid illumination(const ReconState& s) {
  RealGrid out(s.object.ny(), s.object.nx(), 0.0);
  RealGrid p2(s.probe_ny(), s.probe_nx());
  ComplexGrid disp;
  for (std::size_t j = 0; j < s.frame_count(); ++j) {
    if (s.positions[j].status != FrameStatus::Accepted) continue;
    const Window w = locate_window(s.positions[j].best(), s.object, s.object_center, s.probe_ny(), s.probe_nx());
    if (!window_inside(w, s.object.ny(), s.object.nx())) continue;
    displace_probe(s.probe(j).values, w, disp);
    for (std::size_t i = 0; i < p2.size(); ++i) p2[i] = std::norm(disp[i]);
    add_window(out, p2, w);
  }
  return out;
}

struct ObjectComparison {
  double correlation = 0.0;  // amplitude correlation after all gauges
  double raw_correlation = 0.0;  // at zero shift, no ramp removed
  long shift_y = 0;
  long shift_x = 0;
  bool flipped = false;
  Vec2 ramp;  // fitted log-amplitude gradient per pixel
  std::size_t pixels = 0;
};

/// Compares |recon| with |truth| over recon pixels where `weight` exceeds
/// `threshold` x max. Both grids share a pitch; each centre pixel sits at its
/// `*_center`. Searches integer shifts up to `max_shift` (and the flipped truth),
/// then removes an exponential amplitude ramp fitted on the open truth pixels.
inline ObjectComparison compare_objects(const WaveField& recon, Vec2 recon_center, const WaveField& truth, Vec2 truth_center,
                                        const RealGrid& weight, double threshold = 0.1, long max_shift = 6,
                                        bool allow_flip = true) {
  if (std::abs(recon.pitch - truth.pitch) > 1e-9 * truth.pitch) throw Error(ErrorKind::Geometry, "object pitches differ");
  if (weight.ny() != recon.ny() || weight.nx() != recon.nx()) throw Error(ErrorKind::Shape, "weight map must match the reconstruction");
  const double peak = *std::max_element(weight.begin(), weight.end());
  const long oy = std::lround((recon_center.y - truth_center.y) / truth.pitch) + static_cast<long>(truth.ny() / 2) -
                  static_cast<long>(recon.ny() / 2);
  const long ox = std::lround((recon_center.x - truth_center.x) / truth.pitch) + static_cast<long>(truth.nx() / 2) -
                  static_cast<long>(recon.nx() / 2);
  std::vector<std::pair<long, long>> pix;
  for (std::size_t y = 0; y < recon.ny(); ++y)
    for (std::size_t x = 0; x < recon.nx(); ++x)
      if (weight(y, x) > threshold * peak) pix.emplace_back(static_cast<long>(y), static_cast<long>(x));
  if (pix.size() < 2) throw Error(ErrorKind::Input, "no illuminated pixels to compare");

  // Truth amplitude at recon pixel (y, x) under a shift and optional point flip about
  // the illuminated region's centre.
  long cy = 0, cx = 0;
  for (auto [y, x] : pix) {
    cy += y;
    cx += x;
  }
  cy /= static_cast<long>(pix.size());
  cx /= static_cast<long>(pix.size());
  auto truth_at = [&](long y, long x, long sy, long sx, bool flip) {
    long ty = flip ? 2 * cy - y : y, tx = flip ? 2 * cx - x : x;
    ty += oy - sy;
    tx += ox - sx;
    if (ty < 0 || tx < 0 || ty >= static_cast<long>(truth.ny()) || tx >= static_cast<long>(truth.nx())) return 0.0;
    return std::abs(truth.values(static_cast<std::size_t>(ty), static_cast<std::size_t>(tx)));
  };

  std::vector<double> a(pix.size()), b(pix.size());
  for (std::size_t i = 0; i < pix.size(); ++i) a[i] = std::abs(recon.values(static_cast<std::size_t>(pix[i].first), static_cast<std::size_t>(pix[i].second)));

  ObjectComparison out;
  out.pixels = pix.size();
  double best = -2.0;
  for (int f = 0; f < (allow_flip ? 2 : 1); ++f)
    for (long sy = -max_shift; sy <= max_shift; ++sy)
      for (long sx = -max_shift; sx <= max_shift; ++sx) {
        for (std::size_t i = 0; i < pix.size(); ++i) b[i] = truth_at(pix[i].first, pix[i].second, sy, sx, f == 1);
        const double c = correlation(a, b);
        if (f == 0 && sy == 0 && sx == 0) out.raw_correlation = c;
        if (c > best) {
          best = c;
          out.shift_y = sy;
          out.shift_x = sx;
          out.flipped = f == 1;
        }
      }
  for (std::size_t i = 0; i < pix.size(); ++i) b[i] = truth_at(pix[i].first, pix[i].second, out.shift_y, out.shift_x, out.flipped);

  // log|recon| = c0 + gx x + gy y on pixels where the truth is open.
  double tmax = *std::max_element(b.begin(), b.end());
  Eigen::MatrixXd A(0, 3);
  Eigen::VectorXd r(0);
  std::vector<std::size_t> open;
  for (std::size_t i = 0; i < pix.size(); ++i)
    if (b[i] > 0.5 * tmax && a[i] > 0.0) open.push_back(i);
  if (open.size() >= 3) {
    A.resize(static_cast<Eigen::Index>(open.size()), 3);
    r.resize(static_cast<Eigen::Index>(open.size()));
    for (std::size_t k = 0; k < open.size(); ++k) {
      const auto e = static_cast<Eigen::Index>(k);
      A(e, 0) = 1.0;
      A(e, 1) = static_cast<double>(pix[open[k]].second);
      A(e, 2) = static_cast<double>(pix[open[k]].first);
      r(e) = std::log(a[open[k]]);
    }
    const Eigen::Vector3d c = A.colPivHouseholderQr().solve(r);
    out.ramp = {c(1), c(2)};
  }
  std::vector<double> ad(pix.size());
  for (std::size_t i = 0; i < pix.size(); ++i)
    ad[i] = a[i] * std::exp(-(out.ramp.x * static_cast<double>(pix[i].second) + out.ramp.y * static_cast<double>(pix[i].first)));
  out.correlation = std::max(best, correlation(ad, b));
  return out;
}

struct EnergyComparison {
  std::vector<double> relative_error;  // |recon_j / truth_j after gauge - 1|
  double median_error = 0.0;
  double log_scale = 0.0;
  Vec2 log_gradient;  // per metre
  std::vector<double> deramped;  // recon energies with the fitted ramp removed
};

/// Removes scale and an exponential position ramp from recovered per-frame energies
/// by a robust least-squares fit of log(recon / truth) = c + g.position (three rounds
/// of 3-sigma MAD clipping), then reports per-frame relative errors.
inline EnergyComparison compare_energies(const std::vector<double>& recon, const std::vector<double>& truth,
                                         const std::vector<Vec2>& positions) {
  const std::size_t n = recon.size();
  if (truth.size() != n || positions.size() != n || n < 3) throw Error(ErrorKind::Input, "need matching samples of at least 3");
  Eigen::MatrixXd A(static_cast<Eigen::Index>(n), 3);
  Eigen::VectorXd y(static_cast<Eigen::Index>(n));
  // Positions in micrometres keep the normal equations well scaled.
  for (std::size_t j = 0; j < n; ++j) {
    if (!(recon[j] > 0.0) || !(truth[j] > 0.0)) throw Error(ErrorKind::Input, "energies must be positive");
    const auto e = static_cast<Eigen::Index>(j);
    A(e, 0) = 1.0;
    A(e, 1) = positions[j].x * 1e6;
    A(e, 2) = positions[j].y * 1e6;
    y(e) = std::log(recon[j] / truth[j]);
  }
  std::vector<unsigned char> keep(n, 1);
  Eigen::Vector3d c = Eigen::Vector3d::Zero();
  for (int round = 0; round < 4; ++round) {
    std::vector<Eigen::Index> rows;
    for (std::size_t j = 0; j < n; ++j)
      if (keep[j]) rows.push_back(static_cast<Eigen::Index>(j));
    if (rows.size() < 3) break;
    Eigen::MatrixXd As(static_cast<Eigen::Index>(rows.size()), 3);
    Eigen::VectorXd ys(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t k = 0; k < rows.size(); ++k) {
      As.row(static_cast<Eigen::Index>(k)) = A.row(rows[k]);
      ys(static_cast<Eigen::Index>(k)) = y(rows[k]);
    }
    c = As.colPivHouseholderQr().solve(ys);
    std::vector<double> res(n);
    for (std::size_t j = 0; j < n; ++j) res[j] = y(static_cast<Eigen::Index>(j)) - A.row(static_cast<Eigen::Index>(j)).dot(c);
    const double med = median(res);
    std::vector<double> dev(n);
    for (std::size_t j = 0; j < n; ++j) dev[j] = std::abs(res[j] - med);
    const double sigma = 1.4826 * median(dev);
    if (!(sigma > 0.0)) break;
    for (std::size_t j = 0; j < n; ++j) keep[j] = std::abs(res[j]) < 3.0 * sigma;
  }
  EnergyComparison out;
  out.log_scale = c(0);
  out.log_gradient = {c(1) * 1e6, c(2) * 1e6};
  for (std::size_t j = 0; j < n; ++j) {
    const double fit = A.row(static_cast<Eigen::Index>(j)).dot(c);
    out.relative_error.push_back(std::abs(std::exp(y(static_cast<Eigen::Index>(j)) - fit) - 1.0));
    out.deramped.push_back(recon[j] * std::exp(-(c(1) * A(static_cast<Eigen::Index>(j), 1) + c(2) * A(static_cast<Eigen::Index>(j), 2))));
  }
  out.median_error = median(out.relative_error);
  return out;
}

}  // namespace pulseprobe
