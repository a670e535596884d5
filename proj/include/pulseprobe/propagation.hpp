#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <vector>

#include "pulseprobe/error.hpp"
#include "pulseprobe/fft.hpp"
#include "pulseprobe/parallel.hpp"
#include "pulseprobe/wavefield.hpp"

namespace pulseprobe {

/// Far-field geometry. Lengths in metres; grid_n is the reconstruction frame side.
struct Geometry {
  double wavelength = 15e-9;
  double detector_distance = 0.150;
  double detector_pitch = 27e-6;
  std::size_t grid_n = 512;
  double pupil_distance = 1.48;
};

inline void validate(const Geometry& g) {
  if (!(g.wavelength > 0.0) || !(g.detector_distance > 0.0) || !(g.detector_pitch > 0.0))
    throw Error(ErrorKind::Geometry, "wavelength, detector distance and pitch must be positive");
  if (g.grid_n < 2 || g.grid_n % 2 != 0) throw Error(ErrorKind::Geometry, "grid_n must be even and >= 2");
  if (!(g.pupil_distance > 0.0)) throw Error(ErrorKind::Geometry, "pupil distance must be positive");
}

/// Sample-plane pixel size lambda * z / (n * p_det).
inline double recon_pixel_size(const Geometry& g) {
  validate(g);
  return g.wavelength * g.detector_distance / (static_cast<double>(g.grid_n) * g.detector_pitch);
}

struct Propagated {
  WaveField field;
  bool evanescent_clamped = false;
};

/// Angular-spectrum propagation over a signed distance. Components with
/// f_x^2 + f_y^2 > 1/lambda^2 are zeroed and reported through `evanescent_clamped`.
inline Propagated propagate_angular_spectrum(const WaveField& field, double distance) {
  validate(field);
  Propagated out{field, false};
  if (distance == 0.0) return out;

  const double inv_lambda = 1.0 / field.wavelength;
  const double inv_lambda2 = inv_lambda * inv_lambda;
  const std::size_t ny = field.ny();
  const std::size_t nx = field.nx();
  const double dfy = 1.0 / (static_cast<double>(ny) * field.pitch);
  const double dfx = 1.0 / (static_cast<double>(nx) * field.pitch);
  const double two_pi = 2.0 * std::numbers::pi;
  // Carrier exp(i 2 pi z / lambda) reduced modulo one cycle to keep phase precision.
  const double carrier_cycles = std::fmod(distance * inv_lambda, 1.0);
  const double scale = 1.0 / static_cast<double>(ny * nx);

  ComplexGrid& g = out.field.values;
  fft::forward_inplace(g);
  bool clamped = false;
  for (std::size_t y = 0; y < ny; ++y) {
    const double fy = fft::signed_frequency(y, ny) * dfy;
    for (std::size_t x = 0; x < nx; ++x) {
      const double fx = fft::signed_frequency(x, nx) * dfx;
      const double f2 = fx * fx + fy * fy;
      const double arg = inv_lambda2 - f2;
      if (arg < 0.0) {
        g(y, x) = 0.0;
        clamped = true;
        continue;
      }
      // sqrt(1/l^2 - f^2) - 1/l, written to avoid cancellation.
      const double kz_minus = -f2 / (inv_lambda + std::sqrt(arg));
      const double phase = two_pi * (carrier_cycles + distance * kz_minus);
      g(y, x) *= std::polar(scale, phase);
    }
  }
  fft::backward_inplace(g);
  out.evanescent_clamped = clamped;
  return out;
}

/// Single-step Fresnel (Fourier-scaling) propagation over `distance` (signed).
/// Output pitch is lambda*|z|/(n*pitch). The quadratic phase of the destination plane
/// is applied only when `keep_output_phase` is set; constant prefactors are dropped and
/// the transform is unitary, so energy is conserved.
inline WaveField propagate_fresnel(const WaveField& field, double distance, bool keep_output_phase) {
  validate(field);
  if (distance == 0.0) throw Error(ErrorKind::Geometry, "Fresnel propagation needs a non-zero distance");
  if (field.ny() != field.nx()) throw Error(ErrorKind::Shape, "Fresnel scaling requires a square field");
  const std::size_t n = field.nx();
  const double lz = field.wavelength * distance;
  const double out_pitch = field.wavelength * std::abs(distance) / (static_cast<double>(n) * field.pitch);
  const double pi = std::numbers::pi;

  auto coord = [n](std::size_t i, double pitch) {
    return (static_cast<double>(i) - static_cast<double>(n / 2)) * pitch;
  };

  WaveField out = field;
  ComplexGrid& g = out.values;
  for (std::size_t y = 0; y < n; ++y) {
    const double yy = coord(y, field.pitch);
    for (std::size_t x = 0; x < n; ++x) {
      const double xx = coord(x, field.pitch);
      g(y, x) *= std::polar(1.0, pi * (xx * xx + yy * yy) / lz);
    }
  }
  if (distance > 0.0)
    fft::centered_forward_inplace(g);
  else
    fft::centered_backward_inplace(g);
  out.pitch = out_pitch;

  if (keep_output_phase) {
    for (std::size_t y = 0; y < n; ++y) {
      const double yy = coord(y, out_pitch);
      for (std::size_t x = 0; x < n; ++x) {
        const double xx = coord(x, out_pitch);
        g(y, x) *= std::polar(1.0, pi * (xx * xx + yy * yy) / lz);
      }
    }
  }
  return out;
}

/// Back-propagates a sample-plane field to the virtual source plane `pupil_distance`
/// upstream, without the diverging-wave quadratic phase.
inline WaveField backpropagate_to_pupil(const WaveField& field, const Geometry& g) {
  if (!(g.pupil_distance > 0.0)) throw Error(ErrorKind::Geometry, "pupil distance must be positive");
  return propagate_fresnel(field, -g.pupil_distance, false);
}

struct FocalPlane {
  double z = 0.0;
  WaveField field;
  bool evanescent_clamped = false;
};

/// Fields at `steps` uniformly spaced planes in [z_min, z_max] (angular spectrum).
inline std::vector<FocalPlane> focal_series(const WaveField& field, double z_min, double z_max, std::size_t steps) {
  if (steps < 2) throw Error(ErrorKind::Range, "focal series needs at least 2 planes");
  if (!(z_min < z_max)) throw Error(ErrorKind::Range, "z_min must be below z_max");
  validate(field);
  std::vector<FocalPlane> planes(steps);
  const double dz = (z_max - z_min) / static_cast<double>(steps - 1);
  parallel_for(steps, [&](std::size_t i) {
    const double z = (i + 1 == steps) ? z_max : z_min + dz * static_cast<double>(i);
    Propagated p = propagate_angular_spectrum(field, z);
    planes[i] = FocalPlane{z, std::move(p.field), p.evanescent_clamped};
  });
  return planes;
}

}  // namespace pulseprobe
