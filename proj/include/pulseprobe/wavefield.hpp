#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <utility>

#include "pulseprobe/error.hpp"
#include "pulseprobe/fft.hpp"
#include "pulseprobe/grid.hpp"

namespace pulseprobe {

/// Complex field on an even ny x nx grid with physical pixel pitch and wavelength (m).
struct WaveField {
  ComplexGrid values;
  double pitch = 0.0;
  double wavelength = 0.0;

  std::size_t ny() const noexcept { return values.ny(); }
  std::size_t nx() const noexcept { return values.nx(); }
  double energy() const { return sum_norm(values); }
};

/// Photon-count (or ADU) frame. `pitch` is the detector pixel pitch.
struct IntensityFrame {
  RealGrid counts;
  Vec2 nominal_position;
  std::size_t frame_index = 0;
  double pitch = 0.0;

  std::size_t ny() const noexcept { return counts.ny(); }
  std::size_t nx() const noexcept { return counts.nx(); }
  double total() const { return sum(counts); }
};

inline void validate(const WaveField& f) {
  if (f.ny() < 2 || f.nx() < 2 || f.ny() % 2 != 0 || f.nx() % 2 != 0)
    throw Error(ErrorKind::InvalidField, "field dimensions must be even and >= 2");
  if (!(f.pitch > 0.0) || !(f.wavelength > 0.0))
    throw Error(ErrorKind::InvalidField, "pitch and wavelength must be positive");
  if (!all_finite(f.values)) throw Error(ErrorKind::InvalidField, "field contains non-finite values");
}

inline WaveField make_field(std::size_t ny, std::size_t nx, double pitch, double wavelength, cplx fill = {}) {
  return WaveField{ComplexGrid(ny, nx, fill), pitch, wavelength};
}

/// Centred unitary 2-D DFT. Pitch and wavelength are carried through unchanged.
inline WaveField fft2_unitary(const WaveField& field) {
  validate(field);
  WaveField out = field;
  fft::centered_forward_inplace(out.values);
  return out;
}

inline WaveField ifft2_unitary(const WaveField& field) {
  validate(field);
  WaveField out = field;
  fft::centered_backward_inplace(out.values);
  return out;
}

/// Sums factor x factor blocks; counts are conserved and the pitch scales by `factor`.
inline IntensityFrame bin_frame(const IntensityFrame& frame, std::size_t factor) {
  if (factor == 0) throw Error(ErrorKind::Shape, "bin factor must be >= 1");
  if (factor == 1) return frame;
  if (frame.ny() % factor != 0 || frame.nx() % factor != 0)
    throw Error(ErrorKind::Shape, "frame dimensions not divisible by bin factor " + std::to_string(factor));
  IntensityFrame out;
  out.counts = RealGrid(frame.ny() / factor, frame.nx() / factor, 0.0);
  out.nominal_position = frame.nominal_position;
  out.frame_index = frame.frame_index;
  out.pitch = frame.pitch * static_cast<double>(factor);
  for (std::size_t y = 0; y < frame.ny(); ++y)
    for (std::size_t x = 0; x < frame.nx(); ++x) out.counts(y / factor, x / factor) += frame.counts(y, x);
  return out;
}

inline IntensityFrame bin2(const IntensityFrame& frame) { return bin_frame(frame, 2); }

/// Low-side margin used by pad_center: for an odd total margin the extra row/column
/// goes to the high-index side.
inline std::size_t pad_offset(std::size_t from, std::size_t to) { return (to - from) / 2; }

template <typename T>
Grid<T> pad_grid(const Grid<T>& src, std::size_t ny, std::size_t nx, T fill = T{}) {
  if (ny < src.ny() || nx < src.nx()) throw Error(ErrorKind::Shape, "pad target smaller than input");
  Grid<T> out(ny, nx, fill);
  const std::size_t oy = pad_offset(src.ny(), ny);
  const std::size_t ox = pad_offset(src.nx(), nx);
  for (std::size_t y = 0; y < src.ny(); ++y)
    for (std::size_t x = 0; x < src.nx(); ++x) out(y + oy, x + ox) = src(y, x);
  return out;
}

inline IntensityFrame pad_center(const IntensityFrame& frame, std::size_t ny, std::size_t nx) {
  IntensityFrame out = frame;
  out.counts = pad_grid(frame.counts, ny, nx, 0.0);
  return out;
}

/// Circular sub-pixel translation: out(u) = in(u + shift) (shift in pixels, (x, y)),
/// realised as a phase ramp. The unpaired Nyquist bin of an even axis is given the
/// real factor cos(pi shift), the symmetric split of its two aliases, so real inputs
/// stay real. Integer shifts are exact rolls and the adjoint is the shift by -shift.
inline void fourier_shift_inplace(ComplexGrid& g, Vec2 shift) {
  if (shift.x == 0.0 && shift.y == 0.0) return;
  fft::forward_inplace(g);
  const double two_pi = 2.0 * std::numbers::pi;
  const double inv = 1.0 / static_cast<double>(g.size());
  auto factor = [&](std::size_t i, std::size_t n, double s) {
    if (n % 2 == 0 && i == n / 2) return cplx(std::cos(std::numbers::pi * s), 0.0);
    return std::polar(1.0, two_pi * fft::signed_frequency(i, n) * s / static_cast<double>(n));
  };
  std::vector<cplx> ramp_x(g.nx());
  for (std::size_t x = 0; x < g.nx(); ++x) ramp_x[x] = factor(x, g.nx(), shift.x);
  for (std::size_t y = 0; y < g.ny(); ++y) {
    const cplx ry = inv * factor(y, g.ny(), shift.y);
    cplx* row = &g(y, 0);
    for (std::size_t x = 0; x < g.nx(); ++x) row[x] *= ry * ramp_x[x];
  }
  fft::backward_inplace(g);
}

inline ComplexGrid fourier_shift(ComplexGrid g, Vec2 shift) {
  fourier_shift_inplace(g, shift);
  return g;
}

}  // namespace pulseprobe
