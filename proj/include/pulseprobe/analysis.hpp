#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <string>
#include <vector>

#include "pulseprobe/error.hpp"
#include "pulseprobe/image.hpp"
#include "pulseprobe/log.hpp"
#include "pulseprobe/opr.hpp"
#include "pulseprobe/parallel.hpp"
#include "pulseprobe/propagation.hpp"

namespace pulseprobe {

struct HistogramConfig {
  std::size_t bins = 50;
  double bin_width = 0.0;  // > 0 overrides `bins`
  double lower_quantile = 0.01;
  double upper_quantile = 0.99;
};

/// Counts over [edges.front(), edges.back()]; values outside the range land in the
/// first or last bin.
struct Histogram {
  std::vector<double> edges;
  std::vector<std::size_t> counts;
};

/// Linear-interpolation quantile of an unsorted sample.
inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) throw Error(ErrorKind::Input, "quantile of an empty sample");
  std::sort(v.begin(), v.end());
  const double pos = std::clamp(q, 0.0, 1.0) * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline double median(const std::vector<double>& v) { return quantile(v, 0.5); }

inline Histogram make_histogram(const std::vector<double>& values, const HistogramConfig& cfg = {}) {
  if (values.empty()) throw Error(ErrorKind::Input, "histogram of an empty sample");
  double lo = quantile(values, cfg.lower_quantile);
  double hi = quantile(values, cfg.upper_quantile);
  if (!(hi > lo)) {
    const double pad = lo != 0.0 ? 0.5 * std::abs(lo) : 0.5;
    lo -= pad;
    hi += pad;
  }
  std::size_t bins = cfg.bins;
  if (cfg.bin_width > 0.0) bins = static_cast<std::size_t>(std::ceil((hi - lo) / cfg.bin_width));
  if (bins < 1) throw Error(ErrorKind::Range, "histogram needs at least one bin");
  const double width = cfg.bin_width > 0.0 ? cfg.bin_width : (hi - lo) / static_cast<double>(bins);
  Histogram h;
  h.edges.resize(bins + 1);
  for (std::size_t b = 0; b <= bins; ++b) h.edges[b] = lo + width * static_cast<double>(b);
  h.counts.assign(bins, 0);
  for (double v : values) {
    const double t = std::floor((v - lo) / width);
    const auto b = static_cast<std::size_t>(std::clamp(t, 0.0, static_cast<double>(bins - 1)));
    ++h.counts[b];
  }
  return h;
}

struct PulseStats {
  std::vector<std::size_t> frames;      // probes that entered the statistics (non-zero energy)
  std::vector<double> energy;
  std::vector<double> rel_intensity;    // energy / median energy
  std::vector<Vec2> com;                // centre of mass relative to the reference (m)
  std::vector<double> com_displacement; // |com| (m)
  Histogram intensity_histogram;
  Histogram displacement_histogram;

  /// Standard deviation over mean of the relative intensities.
  double relative_std() const {
    const double n = static_cast<double>(rel_intensity.size());
    double m = 0.0, s = 0.0;
    for (double v : rel_intensity) m += v;
    m /= n;
    for (double v : rel_intensity) s += (v - m) * (v - m);
    return std::sqrt(s / (n - 1.0)) / m;
  }
  double median_displacement() const { return median(com_displacement); }
};

/// Energy and intensity centre of mass of one probe; the centre is in metres from the
/// grid centre pixel (ny/2, nx/2).
inline std::pair<double, Vec2> energy_and_com(const WaveField& p) {
  double e = 0.0, sx = 0.0, sy = 0.0;
  for (std::size_t y = 0; y < p.ny(); ++y)
    for (std::size_t x = 0; x < p.nx(); ++x) {
      const double w = std::norm(p.values(y, x));
      e += w;
      sx += w * (static_cast<double>(x) - static_cast<double>(p.nx() / 2));
      sy += w * (static_cast<double>(y) - static_cast<double>(p.ny() / 2));
    }
  if (!(e > 0.0)) return {0.0, Vec2{}};
  return {e, Vec2{sx / e * p.pitch, sy / e * p.pitch}};
}

/// Per-pulse energy and pointing. The centre of mass is taken relative to `reference`
/// (metres from the grid centre). `offsets`, when given, are added per probe; a
/// reconstruction keeps pointing jitter in its scan positions, so passing
/// (refined - nominal) position reports the full beam displacement.
inline PulseStats pulse_statistics(const std::vector<WaveField>& probes, Vec2 reference = {},
                                   const std::vector<Vec2>& offsets = {}, const HistogramConfig& hist = {}) {
  if (probes.size() < 2) throw Error(ErrorKind::Input, "pulse statistics need at least two probes");
  if (!offsets.empty() && offsets.size() != probes.size()) throw Error(ErrorKind::Input, "one offset per probe required");
  std::vector<std::pair<double, Vec2>> ec(probes.size());
  parallel_for(probes.size(), [&](std::size_t j) { ec[j] = energy_and_com(probes[j]); });

  PulseStats s;
  for (std::size_t j = 0; j < probes.size(); ++j) {
    if (!(ec[j].first > 0.0)) {
      log().warn("probe {} has zero energy and is left out of the pulse statistics", j);
      continue;
    }
    Vec2 c = ec[j].second - reference;
    if (!offsets.empty()) c = c + offsets[j];
    s.frames.push_back(j);
    s.energy.push_back(ec[j].first);
    s.com.push_back(c);
    s.com_displacement.push_back(std::hypot(c.x, c.y));
  }
  if (s.frames.size() < 2) throw Error(ErrorKind::Input, "fewer than two probes with non-zero energy");
  const double med = median(s.energy);
  for (double e : s.energy) s.rel_intensity.push_back(e / med);
  s.intensity_histogram = make_histogram(s.rel_intensity, hist);
  s.displacement_histogram = make_histogram(s.com_displacement, hist);
  return s;
}

inline PulseStats pulse_statistics(const ProbeStack& stack, Vec2 reference = {}, const std::vector<Vec2>& offsets = {},
                                   const HistogramConfig& hist = {}) {
  std::vector<WaveField> probes;
  for (std::size_t j = 0; j < stack.count(); ++j) probes.push_back(stack.probe(j));
  return pulse_statistics(probes, reference, offsets, hist);
}

/// Singular values divided by the largest one.
inline std::vector<double> mode_weights(const EigenBasis& basis) {
  if (basis.sigma.size() == 0) throw Error(ErrorKind::Input, "basis has no singular values");
  const double s0 = basis.sigma(0);
  if (!(s0 > 0.0)) throw Error(ErrorKind::Numeric, "largest singular value is zero");
  std::vector<double> w(static_cast<std::size_t>(basis.sigma.size()));
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = basis.sigma(static_cast<Eigen::Index>(i)) / s0;
  w[0] = 1.0;
  return w;
}

/// Beam size along x and y: twice the second-moment standard deviation of |f|^2 (m).
inline Vec2 beam_width(const WaveField& f) {
  const auto [e, c] = energy_and_com(f);
  if (!(e > 0.0)) throw Error(ErrorKind::Numeric, "beam width of a zero field");
  double vx = 0.0, vy = 0.0;
  for (std::size_t y = 0; y < f.ny(); ++y)
    for (std::size_t x = 0; x < f.nx(); ++x) {
      const double w = std::norm(f.values(y, x));
      const double dx = (static_cast<double>(x) - static_cast<double>(f.nx() / 2)) * f.pitch - c.x;
      const double dy = (static_cast<double>(y) - static_cast<double>(f.ny() / 2)) * f.pitch - c.y;
      vx += w * dx * dx;
      vy += w * dy * dy;
    }
  return {2.0 * std::sqrt(vx / e), 2.0 * std::sqrt(vy / e)};
}

struct FocusResult {
  double z_focus = 0.0;
  double width_at_focus = 0.0;
  std::vector<double> z;
  std::vector<double> width;  // geometric mean of the x and y beam widths per plane
};

/// Plane of minimum beam size over `steps` planes in [z_min, z_max], refined by a
/// parabola through the minimum and its two neighbours.
inline FocusResult find_focus(const WaveField& field, double z_min, double z_max, std::size_t steps) {
  if (steps < 3) throw Error(ErrorKind::Range, "focus search needs at least 3 planes");
  const auto planes = focal_series(field, z_min, z_max, steps);
  FocusResult r;
  r.z.resize(steps);
  r.width.resize(steps);
  parallel_for(steps, [&](std::size_t i) {
    const Vec2 w = beam_width(planes[i].field);
    r.z[i] = planes[i].z;
    r.width[i] = std::sqrt(w.x * w.y);
  });
  const auto i = static_cast<std::size_t>(std::min_element(r.width.begin(), r.width.end()) - r.width.begin());
  if (i == 0 || i + 1 == steps) throw Error(ErrorKind::Range, "beam width is monotone over the range; focus lies outside it");
  const double a = r.width[i - 1], b = r.width[i], c = r.width[i + 1];
  const double curv = a - 2.0 * b + c;
  const double dz = r.z[i + 1] - r.z[i];
  double t = curv > 0.0 ? 0.5 * (a - c) / curv : 0.0;
  t = std::clamp(t, -1.0, 1.0);
  r.z_focus = r.z[i] + t * dz;
  r.width_at_focus = b - 0.25 * (a - c) * t;
  return r;
}

/// Intensity cuts through the grid centre stacked over z, one row per plane:
/// first the horizontal cut (along x), then the vertical one (along y).
inline std::pair<RealGrid, RealGrid> focal_sections(const std::vector<FocalPlane>& planes) {
  if (planes.empty()) throw Error(ErrorKind::Input, "no planes");
  const std::size_t ny = planes[0].field.ny(), nx = planes[0].field.nx();
  RealGrid h(planes.size(), nx), v(planes.size(), ny);
  for (std::size_t i = 0; i < planes.size(); ++i) {
    const auto& f = planes[i].field.values;
    for (std::size_t x = 0; x < nx; ++x) h(i, x) = std::norm(f(ny / 2, x));
    for (std::size_t y = 0; y < ny; ++y) v(i, y) = std::norm(f(y, nx / 2));
  }
  return {std::move(h), std::move(v)};
}

inline void write_histogram_csv(const std::string& path, const Histogram& h) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot open " + path + " for writing");
  out.precision(17);
  out << "bin_lo,bin_hi,count\n";
  for (std::size_t b = 0; b < h.counts.size(); ++b) out << h.edges[b] << ',' << h.edges[b + 1] << ',' << h.counts[b] << '\n';
  if (!out) throw Error(ErrorKind::Io, "failed writing " + path);
}

inline void write_pulse_csv(const std::string& path, const PulseStats& s) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot open " + path + " for writing");
  out.precision(17);
  out << "frame,energy,rel_intensity,com_x_m,com_y_m,com_displacement_m\n";
  for (std::size_t i = 0; i < s.frames.size(); ++i)
    out << s.frames[i] << ',' << s.energy[i] << ',' << s.rel_intensity[i] << ',' << s.com[i].x << ',' << s.com[i].y << ','
        << s.com_displacement[i] << '\n';
  if (!out) throw Error(ErrorKind::Io, "failed writing " + path);
}

}  // namespace pulseprobe
