#pragma once

#include <cmath>
#include <complex>
#include <numbers>
#include <random>

#include <Eigen/Dense>

#include "pulseprobe/grid.hpp"
#include "pulseprobe/wavefield.hpp"

namespace oracle {

using pulseprobe::ComplexGrid;
using pulseprobe::cplx;

/// Centred unitary DFT by direct summation; sign -1 forward, +1 inverse.
inline ComplexGrid direct_dft(const ComplexGrid& in, int sign) {
  const std::size_t ny = in.ny();
  const std::size_t nx = in.nx();
  ComplexGrid out(ny, nx);
  const double two_pi = 2.0 * std::numbers::pi;
  const double norm = 1.0 / std::sqrt(static_cast<double>(ny * nx));
  for (std::size_t u = 0; u < ny; ++u)
    for (std::size_t v = 0; v < nx; ++v) {
      cplx acc = 0.0;
      const double fu = static_cast<double>(u) - static_cast<double>(ny / 2);
      const double fv = static_cast<double>(v) - static_cast<double>(nx / 2);
      for (std::size_t y = 0; y < ny; ++y)
        for (std::size_t x = 0; x < nx; ++x) {
          const double py = static_cast<double>(y) - static_cast<double>(ny / 2);
          const double px = static_cast<double>(x) - static_cast<double>(nx / 2);
          const double phase = sign * two_pi * (fu * py / static_cast<double>(ny) + fv * px / static_cast<double>(nx));
          acc += in(y, x) * std::polar(1.0, phase);
        }
      out(u, v) = acc * norm;
    }
  return out;
}

inline ComplexGrid random_grid(std::size_t ny, std::size_t nx, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  ComplexGrid g(ny, nx);
  for (auto& v : g) v = cplx(n(rng), n(rng));
  return g;
}

inline pulseprobe::WaveField random_field(std::size_t ny, std::size_t nx, unsigned seed, double pitch = 1e-7,
                                          double wavelength = 15e-9) {
  return pulseprobe::WaveField{random_grid(ny, nx, seed), pitch, wavelength};
}

inline double max_abs_diff(const ComplexGrid& a, const ComplexGrid& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline Eigen::MatrixXcd random_matrix(Eigen::Index rows, Eigen::Index cols, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXcd m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = cplx(n(rng), n(rng));
  return m;
}

/// Largest principal angle between the column spaces of A and B (orthonormal columns),
/// from the sine form, which stays accurate for tiny angles where acos does not.
inline double max_principal_angle(const Eigen::MatrixXcd& A, const Eigen::MatrixXcd& B) {
  const Eigen::MatrixXcd R = B - A * (A.adjoint() * B);
  Eigen::JacobiSVD<Eigen::MatrixXcd> svd(R);
  return std::asin(std::min(1.0, svd.singularValues()(0)));
}

}  // namespace oracle
