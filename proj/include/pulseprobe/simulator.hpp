#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "pulseprobe/error.hpp"
#include "pulseprobe/fft.hpp"
#include "pulseprobe/frameset.hpp"
#include "pulseprobe/parallel.hpp"
#include "pulseprobe/propagation.hpp"
#include "pulseprobe/rng.hpp"
#include "pulseprobe/wavefield.hpp"
#include "pulseprobe/window.hpp"

namespace pulseprobe {

struct SiemensStar {
  std::size_t n_spokes = 36;
  double outer_radius = 15e-6;
  double inner_radius = 0.0;
  double t_gold = 0.0;
  double t_open = 1.0;
};

/// Binary spoke pattern centred on the grid. Everything outside the outer radius and,
/// for n_spokes > 0, inside the inner radius is gold.
inline WaveField make_siemens_star(const SiemensStar& spec, double pitch, std::size_t ny, std::size_t nx,
                                   double wavelength = 15e-9) {
  if (!(pitch > 0.0)) throw Error(ErrorKind::InvalidField, "star pitch must be positive");
  if (!(spec.outer_radius > 0.0) || spec.inner_radius < 0.0 || spec.inner_radius >= spec.outer_radius)
    throw Error(ErrorKind::Range, "star radii must satisfy 0 <= inner < outer");
  const double half_extent = static_cast<double>(std::min(ny, nx) / 2) * pitch;
  if (spec.outer_radius > half_extent) throw Error(ErrorKind::Shape, "star outer radius exceeds the grid");

  WaveField out = make_field(ny, nx, pitch, wavelength, spec.t_gold);
  const double sector = spec.n_spokes > 0 ? std::numbers::pi / static_cast<double>(spec.n_spokes) : 0.0;
  for (std::size_t y = 0; y < ny; ++y) {
    const double dy = (static_cast<double>(y) - static_cast<double>(ny / 2)) * pitch;
    for (std::size_t x = 0; x < nx; ++x) {
      const double dx = (static_cast<double>(x) - static_cast<double>(nx / 2)) * pitch;
      const double r = std::hypot(dx, dy);
      if (r > spec.outer_radius) continue;
      bool open = true;
      if (spec.n_spokes > 0) {
        if (r < spec.inner_radius) continue;
        const double theta = std::atan2(dy, dx) + std::numbers::pi;
        const auto k = static_cast<long long>(std::floor(theta / sector));
        open = (k % 2) == 0;
      }
      out.values(y, x) = open ? spec.t_open : spec.t_gold;
    }
  }
  return out;
}

struct ScanPlan {
  Vec2 center;
  Vec2 extent{25e-6, 25e-6};
  double step = 2.5e-6;
  std::size_t n_positions = 101;
  std::size_t repeats_per_position = 5;
};

/// Fermat spiral r = (step / sqrt(pi)) sqrt(i), theta = i * golden angle, keeping
/// points inside the extent rectangle until n_positions are collected.
inline std::vector<Vec2> spiral_positions(const ScanPlan& plan) {
  if (plan.n_positions < 1) throw Error(ErrorKind::Plan, "scan needs at least one position");
  if (!(plan.step > 0.0)) throw Error(ErrorKind::Plan, "scan step must be positive");
  if (plan.extent.x < 0.0 || plan.extent.y < 0.0) throw Error(ErrorKind::Plan, "scan extent must be non-negative");
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  const double a = plan.step / std::sqrt(std::numbers::pi);
  const double hx = 0.5 * plan.extent.x;
  const double hy = 0.5 * plan.extent.y;
  const double r_max = std::hypot(hx, hy);

  std::vector<Vec2> out;
  out.reserve(plan.n_positions);
  for (std::size_t i = 0; out.size() < plan.n_positions; ++i) {
    const double r = a * std::sqrt(static_cast<double>(i));
    if (r > r_max)
      throw Error(ErrorKind::Plan, "extent too small for " + std::to_string(plan.n_positions) + " positions");
    const double theta = static_cast<double>(i) * golden;
    const double x = r * std::cos(theta);
    const double y = r * std::sin(theta);
    if (std::abs(x) <= hx && std::abs(y) <= hy) out.push_back(plan.center + Vec2{x, y});
  }
  return out;
}

namespace detail {

inline double hermite(std::size_t n, double t) {
  double h0 = 1.0;
  if (n == 0) return h0;
  double h1 = 2.0 * t;
  for (std::size_t k = 1; k < n; ++k) {
    const double h2 = 2.0 * t * h1 - 2.0 * static_cast<double>(k) * h0;
    h0 = h1;
    h1 = h2;
  }
  return h1;
}

inline cplx inner(const ComplexGrid& a, const ComplexGrid& b) {
  cplx s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::conj(a[i]) * b[i];
  return s;
}

}  // namespace detail

/// Modified Gram-Schmidt in the field inner product; every output has unit energy.
inline void orthonormalize(std::vector<WaveField>& modes) {
  for (std::size_t i = 0; i < modes.size(); ++i) {
    for (std::size_t k = 0; k < i; ++k) {
      const cplx c = detail::inner(modes[k].values, modes[i].values);
      for (std::size_t p = 0; p < modes[i].values.size(); ++p) modes[i].values[p] -= c * modes[k].values[p];
    }
    const double nrm = std::sqrt(modes[i].energy());
    if (!(nrm > 0.0)) throw Error(ErrorKind::Rank, "modes are linearly dependent");
    for (auto& v : modes[i].values) v /= nrm;
  }
}

/// Hermite-Gauss modes HG_mn (HG00, HG10, HG01, HG11, ...) with an optional common
/// quadratic phase of curvature radius R (0 = flat), orthonormalized on the grid.
inline std::vector<WaveField> hermite_gauss_modes(std::size_t n, double pitch, double wavelength, double waist,
                                                  std::size_t count, double curvature_radius = 0.0) {
  if (count == 0) throw Error(ErrorKind::Range, "need at least one mode");
  if (!(waist > 0.0)) throw Error(ErrorKind::Range, "waist must be positive");
  // (m along x, n along y) ordered by max(m, n), then m + n: HG00, HG10, HG01, HG11, HG20, ...
  std::vector<std::pair<std::size_t, std::size_t>> orders;
  std::size_t side = 1;
  while (side * side < count) ++side;
  for (std::size_t m = 0; m < side; ++m)
    for (std::size_t k = 0; k < side; ++k) orders.emplace_back(m, k);
  std::stable_sort(orders.begin(), orders.end(), [](auto a, auto b) {
    const auto ma = std::max(a.first, a.second);
    const auto mb = std::max(b.first, b.second);
    if (ma != mb) return ma < mb;
    if (a.first + a.second != b.first + b.second) return a.first + a.second < b.first + b.second;
    return a.first > b.first;
  });
  orders.resize(count);

  std::vector<WaveField> modes;
  const double s = std::sqrt(2.0) / waist;
  for (auto [m, k] : orders) {
    WaveField f = make_field(n, n, pitch, wavelength);
    for (std::size_t y = 0; y < n; ++y) {
      const double yy = (static_cast<double>(y) - static_cast<double>(n / 2)) * pitch;
      for (std::size_t x = 0; x < n; ++x) {
        const double xx = (static_cast<double>(x) - static_cast<double>(n / 2)) * pitch;
        const double r2 = xx * xx + yy * yy;
        const double amp = detail::hermite(m, s * xx) * detail::hermite(k, s * yy) * std::exp(-r2 / (waist * waist));
        const double phase = curvature_radius != 0.0 ? std::numbers::pi * r2 / (wavelength * curvature_radius) : 0.0;
        f.values(y, x) = amp * std::polar(1.0, phase);
      }
    }
    modes.push_back(std::move(f));
  }
  orthonormalize(modes);
  return modes;
}

/// Generative per-pulse probe model.
struct PulseModel {
  std::vector<WaveField> base_modes;
  std::vector<cplx> weight_mean;
  std::vector<double> weight_sigma;
  double intensity_rel_sigma = 0.0;
  Vec2 jitter_sigma;  // (major, minor) standard deviations along the rotated axes
  double jitter_axis_angle = 0.0;
};

inline void validate(const PulseModel& m) {
  if (m.base_modes.empty()) throw Error(ErrorKind::Range, "pulse model needs at least one mode");
  if (m.weight_mean.size() != m.base_modes.size() || m.weight_sigma.size() != m.base_modes.size())
    throw Error(ErrorKind::Range, "weight statistics must have one entry per mode");
  if (m.intensity_rel_sigma < 0.0 || m.jitter_sigma.x < 0.0 || m.jitter_sigma.y < 0.0)
    throw Error(ErrorKind::Range, "standard deviations must be non-negative");
  for (double s : m.weight_sigma)
    if (s < 0.0) throw Error(ErrorKind::Range, "weight sigma must be non-negative");
  for (std::size_t i = 0; i < m.base_modes.size(); ++i) {
    validate(m.base_modes[i]);
    if (!m.base_modes[i].values.same_shape(m.base_modes[0].values)) throw Error(ErrorKind::Shape, "mode shapes differ");
    for (std::size_t k = 0; k <= i; ++k) {
      const cplx c = detail::inner(m.base_modes[k].values, m.base_modes[i].values);
      const double expect = i == k ? 1.0 : 0.0;
      if (std::abs(c - expect) > 1e-8) throw Error(ErrorKind::Range, "base modes are not orthonormal");
    }
  }
}

struct PulseDraw {
  std::vector<cplx> coefficients;  // probe = sum_i coefficients[i] * mode_i
  double energy = 0.0;
  Vec2 offset;
};

/// Random part of draw_pulse: mode coefficients (unit-energy combination scaled by a
/// lognormal energy factor with mean 1) and the pointing offset.
inline PulseDraw draw_pulse_coefficients(const PulseModel& model, std::uint64_t seed, std::size_t j) {
  const std::size_t k = model.base_modes.size();
  PulseDraw d;
  d.coefficients.resize(k);
  auto rng = make_rng(seed, j, Stream::Pulse);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = 0; i < k; ++i) {
    const double re = normal(rng);
    const double im = normal(rng);
    d.coefficients[i] = model.weight_mean[i] + model.weight_sigma[i] * cplx(re, im) / std::sqrt(2.0);
  }
  double norm2 = 0.0;
  for (const auto& c : d.coefficients) norm2 += std::norm(c);

  double factor = 1.0;
  const double z = normal(rng);
  if (model.intensity_rel_sigma > 0.0) {
    const double s2 = std::log1p(model.intensity_rel_sigma * model.intensity_rel_sigma);
    factor = std::exp(-0.5 * s2 + std::sqrt(s2) * z);
  }
  const double scale = norm2 > 0.0 ? std::sqrt(factor / norm2) : 0.0;
  for (auto& c : d.coefficients) c *= scale;
  d.energy = norm2 > 0.0 ? factor : 0.0;

  auto jit = make_rng(seed, j, Stream::Jitter);
  const double a = model.jitter_sigma.x * normal(jit);
  const double b = model.jitter_sigma.y * normal(jit);
  const double ca = std::cos(model.jitter_axis_angle);
  const double sa = std::sin(model.jitter_axis_angle);
  d.offset = {a * ca - b * sa, a * sa + b * ca};
  return d;
}

inline WaveField combine_modes(const std::vector<WaveField>& modes, const std::vector<cplx>& coefficients) {
  if (modes.empty() || modes.size() != coefficients.size()) throw Error(ErrorKind::Range, "mode/coefficient count mismatch");
  WaveField out = modes[0];
  for (auto& v : out.values) v = 0.0;
  for (std::size_t i = 0; i < modes.size(); ++i) {
    if (coefficients[i] == cplx(0.0)) continue;
    for (std::size_t p = 0; p < out.values.size(); ++p) out.values[p] += coefficients[i] * modes[i].values[p];
  }
  return out;
}

/// Draws the probe for pulse j and its pointing offset; reproducible per (seed, j).
inline std::pair<WaveField, Vec2> draw_pulse(const PulseModel& model, std::uint64_t seed, std::size_t j) {
  validate(model);
  PulseDraw d = draw_pulse_coefficients(model, seed, j);
  return {combine_modes(model.base_modes, d.coefficients), d.offset};
}

struct RenderOptions {
  double photons = 1e7;  // photons per unit exit-wave energy
  bool poisson = true;
  std::uint64_t seed = 0;
  std::size_t frame_index = 0;
  Vec2 object_center;
  double detector_pitch = 1.0;
};

/// Exit-wave intensity expected at the detector, photons * |F(P . O_window)|^2.
inline RealGrid expected_intensity(const WaveField& object, const WaveField& probe, Vec2 position, double photons,
                                   Vec2 object_center = {}) {
  if (std::abs(object.pitch - probe.pitch) > 1e-9 * probe.pitch)
    throw Error(ErrorKind::Geometry, "object and probe pitch differ");
  const Window w = locate_window(position, object, object_center, probe.ny(), probe.nx());
  if (!window_inside(w, object.ny(), object.nx()))
    throw Error(ErrorKind::OutOfField, "probe window leaves the object at the requested position");
  ComplexGrid exit, p;
  extract_window(object.values, w, exit);
  displace_probe(probe.values, w, p);
  for (std::size_t i = 0; i < exit.size(); ++i) exit[i] *= p[i];
  fft::centered_forward_inplace(exit);
  RealGrid out(exit.ny(), exit.nx());
  for (std::size_t i = 0; i < exit.size(); ++i) out[i] = photons * std::norm(exit[i]);
  return out;
}

inline IntensityFrame render_frame(const WaveField& object, const WaveField& probe, Vec2 position,
                                   const RenderOptions& opt) {
  validate(probe);
  IntensityFrame frame;
  frame.counts = expected_intensity(object, probe, position, opt.photons, opt.object_center);
  frame.nominal_position = position;
  frame.frame_index = opt.frame_index;
  frame.pitch = opt.detector_pitch;
  if (opt.poisson) {
    auto rng = make_rng(opt.seed, opt.frame_index, Stream::Photons);
    for (auto& v : frame.counts) {
      if (v <= 0.0) {
        v = 0.0;
        continue;
      }
      std::poisson_distribution<long long> dist(v);
      v = static_cast<double>(dist(rng));
    }
  }
  return frame;
}

inline IntensityFrame render_frame(const WaveField& object, const WaveField& probe, Vec2 position, double photons,
                                   std::uint64_t rng_seed) {
  RenderOptions opt;
  opt.photons = photons;
  opt.seed = rng_seed;
  return render_frame(object, probe, position, opt);
}

struct ProbeConfig {
  double waist = 5e-6;
  double curvature_radius = 3e-3;
  std::size_t mode_count = 4;
  std::vector<double> weight_sigma{0.15, 0.15, 0.15};  // modes 1.. (mode 0 has mean 1, sigma 0)
  double intensity_rel_sigma = 0.4;
  double jitter_sigma_major = 9.2e-6;
  double jitter_sigma_minor = 4.6e-6;  // gives a median radial pointing offset of 8 um
  double jitter_axis_angle = 0.0;
};

struct SimulationConfig {
  double wavelength = 15e-9;
  double detector_distance = 0.150;
  std::size_t raw_n = 1000;
  double raw_pitch = 13.5e-6;
  SiemensStar star;
  ProbeConfig probe;
  std::vector<ScanPlan> scans{ScanPlan{}, ScanPlan{}, ScanPlan{Vec2{0.0, 5e-6}}};  // third scan shifted to cover the 30 um star in y
  double photons = 1e7;
  bool noiseless = false;
  double adu_per_photon = 1.0;
  double dark_level = 50.0;
  double out_of_field_fraction = 1.0 - 937.0 / 1515.0;
  std::uint64_t seed = 1;
};

inline double sample_pitch(const SimulationConfig& c) {
  return c.wavelength * c.detector_distance / (static_cast<double>(c.raw_n) * c.raw_pitch);
}

/// Ground truth of a simulated dataset.
struct Truth {
  std::vector<WaveField> modes;
  std::vector<PulseDraw> pulses;      // per frame: coefficients, energy factor, offset
  std::vector<Vec2> positions;        // true illumination positions
  std::vector<unsigned char> off_sample;  // injected out-of-field frames (beam misses the sample)
  SiemensStar star;
  WaveField object;
  Vec2 object_center;

  WaveField probe(std::size_t j) const { return combine_modes(modes, pulses.at(j).coefficients); }
};

struct SimulationPlan {
  std::vector<Vec2> nominal;
  Vec2 field_lo;  // scanned rectangle
  Vec2 field_hi;
};

inline SimulationPlan plan_scans(const std::vector<ScanPlan>& scans) {
  if (scans.empty()) throw Error(ErrorKind::Plan, "no scans configured");
  SimulationPlan p;
  p.field_lo = {1e300, 1e300};
  p.field_hi = {-1e300, -1e300};
  for (const auto& s : scans) {
    if (s.repeats_per_position < 1) throw Error(ErrorKind::Plan, "repeats_per_position must be >= 1");
    const auto pts = spiral_positions(s);
    for (const auto& q : pts)
      for (std::size_t r = 0; r < s.repeats_per_position; ++r) p.nominal.push_back(q);
    p.field_lo = {std::min(p.field_lo.x, s.center.x - 0.5 * s.extent.x), std::min(p.field_lo.y, s.center.y - 0.5 * s.extent.y)};
    p.field_hi = {std::max(p.field_hi.x, s.center.x + 0.5 * s.extent.x), std::max(p.field_hi.y, s.center.y + 0.5 * s.extent.y)};
  }
  return p;
}

/// True when `p` lies inside the rectangle [lo, hi] dilated about its centre by `dilation`.
inline bool inside_dilated(Vec2 p, Vec2 lo, Vec2 hi, double dilation) {
  const Vec2 c{0.5 * (lo.x + hi.x), 0.5 * (lo.y + hi.y)};
  const double hx = 0.5 * (hi.x - lo.x) * (1.0 + dilation);
  const double hy = 0.5 * (hi.y - lo.y) * (1.0 + dilation);
  return std::abs(p.x - c.x) <= hx && std::abs(p.y - c.y) <= hy;
}

inline PulseModel make_pulse_model(const SimulationConfig& cfg) {
  PulseModel m;
  m.base_modes = hermite_gauss_modes(cfg.raw_n, sample_pitch(cfg), cfg.wavelength, cfg.probe.waist, cfg.probe.mode_count,
                                     cfg.probe.curvature_radius);
  m.weight_mean.assign(cfg.probe.mode_count, 0.0);
  m.weight_mean[0] = 1.0;
  m.weight_sigma.assign(cfg.probe.mode_count, 0.0);
  for (std::size_t i = 1; i < cfg.probe.mode_count && i - 1 < cfg.probe.weight_sigma.size(); ++i)
    m.weight_sigma[i] = cfg.probe.weight_sigma[i - 1];
  m.intensity_rel_sigma = cfg.probe.intensity_rel_sigma;
  m.jitter_sigma = {cfg.probe.jitter_sigma_major, cfg.probe.jitter_sigma_minor};
  m.jitter_axis_angle = cfg.probe.jitter_axis_angle;
  return m;
}

/// Simulates the configured dataset. Raw frames (ADU = gain * photons + dark level,
/// rounded to float32) are handed to `sink` in frame order; rendering runs in parallel
/// batches. Returns the ground truth.
inline Truth simulate_dataset(const SimulationConfig& cfg, const std::function<void(IntensityFrame&&)>& sink) {
  if (cfg.raw_n < 2 || cfg.raw_n % 2 != 0) throw Error(ErrorKind::Shape, "raw_n must be even and >= 2");
  if (!(cfg.photons > 0.0) || !(cfg.adu_per_photon > 0.0)) throw Error(ErrorKind::Range, "photons and gain must be positive");
  if (cfg.out_of_field_fraction < 0.0 || cfg.out_of_field_fraction >= 1.0)
    throw Error(ErrorKind::Range, "out_of_field_fraction must be in [0, 1)");
  const double pitch = sample_pitch(cfg);
  const SimulationPlan plan = plan_scans(cfg.scans);
  const std::size_t n = plan.nominal.size();

  Truth truth;
  truth.star = cfg.star;
  PulseModel model = make_pulse_model(cfg);
  truth.modes = model.base_modes;
  truth.pulses.resize(n);
  truth.positions.resize(n);
  truth.off_sample.assign(n, 0);
  for (std::size_t j = 0; j < n; ++j) {
    truth.pulses[j] = draw_pulse_coefficients(model, cfg.seed, j);
    truth.positions[j] = plan.nominal[j] + truth.pulses[j].offset;
  }

  // Top up the naturally out-of-field frames with pulses that miss the sample.
  std::size_t natural_out = 0;
  std::vector<std::pair<std::uint64_t, std::size_t>> candidates;
  for (std::size_t j = 0; j < n; ++j) {
    if (inside_dilated(truth.positions[j], plan.field_lo, plan.field_hi, 0.2))
      candidates.emplace_back(splitmix64(cfg.seed ^ splitmix64(j + 0x5bd1e995ULL)), j);
    else
      ++natural_out;
  }
  const auto target = static_cast<std::size_t>(std::llround(cfg.out_of_field_fraction * static_cast<double>(n)));
  if (target > natural_out) {
    std::sort(candidates.begin(), candidates.end());
    const double half_window = 0.5 * static_cast<double>(cfg.raw_n) * pitch;
    for (std::size_t c = 0; c < target - natural_out && c < candidates.size(); ++c) {
      const std::size_t j = candidates[c].second;
      truth.off_sample[j] = 1;
      const double side = truth.pulses[j].offset.x < 0.0 ? -1.0 : 1.0;
      truth.positions[j] = {side * (cfg.star.outer_radius + half_window), plan.nominal[j].y};
      truth.pulses[j].offset = truth.positions[j] - plan.nominal[j];
    }
  }

  // Object grid covering every on-sample window.
  double reach = cfg.star.outer_radius / pitch + 2.0;
  for (std::size_t j = 0; j < n; ++j) {
    if (truth.off_sample[j]) continue;
    reach = std::max(reach, std::max(std::abs(truth.positions[j].x), std::abs(truth.positions[j].y)) / pitch +
                                0.5 * static_cast<double>(cfg.raw_n) + 2.0);
  }
  const auto obj_n = static_cast<std::size_t>(2 * static_cast<std::size_t>(std::ceil(reach)) + 2);
  truth.object = make_siemens_star(cfg.star, pitch, obj_n, obj_n, cfg.wavelength);

  RenderOptions base;
  base.photons = cfg.photons;
  base.poisson = !cfg.noiseless;
  base.seed = cfg.seed;
  base.detector_pitch = cfg.raw_pitch;

  const std::size_t batch = 32;
  for (std::size_t start = 0; start < n; start += batch) {
    const std::size_t count = std::min(batch, n - start);
    std::vector<IntensityFrame> frames(count);
    parallel_for(count, [&](std::size_t b) {
      const std::size_t j = start + b;
      IntensityFrame f;
      if (truth.off_sample[j]) {
        f.counts = RealGrid(cfg.raw_n, cfg.raw_n, 0.0);
      } else {
        RenderOptions opt = base;
        opt.frame_index = j;
        f = render_frame(truth.object, combine_modes(truth.modes, truth.pulses[j].coefficients), truth.positions[j], opt);
      }
      for (auto& v : f.counts) v = static_cast<double>(static_cast<float>(v * cfg.adu_per_photon + cfg.dark_level));
      f.frame_index = j;
      f.nominal_position = plan.nominal[j];
      f.pitch = cfg.raw_pitch;
      frames[b] = std::move(f);
    });
    for (auto& f : frames) sink(std::move(f));
  }
  return truth;
}

inline IntensityFrame make_dark_frame(const SimulationConfig& cfg) {
  IntensityFrame dark;
  dark.counts = RealGrid(cfg.raw_n, cfg.raw_n, static_cast<double>(static_cast<float>(cfg.dark_level)));
  dark.pitch = cfg.raw_pitch;
  return dark;
}

struct SimulatedData {
  FrameSet raw;
  IntensityFrame dark;
  Truth truth;
};

inline SimulatedData simulate_dataset(const SimulationConfig& cfg) {
  SimulatedData out;
  out.truth = simulate_dataset(cfg, [&](IntensityFrame&& f) { out.raw.frames.push_back(std::move(f)); });
  out.dark = make_dark_frame(cfg);
  return out;
}

}  // namespace pulseprobe
