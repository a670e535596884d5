#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <span>
#include <vector>

#include "pulseprobe/error.hpp"

namespace pulseprobe {

using cplx = std::complex<double>;

/// Physical (x, y) pair in metres, or pixels where noted.
struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
  friend bool operator==(Vec2 a, Vec2 b) = default;
  double norm() const { return std::hypot(x, y); }
};

/// Dense row-major 2-D array. Row index is y, column index is x.
template <typename T>
class Grid {
 public:
  Grid() = default;
  Grid(std::size_t ny, std::size_t nx, T fill = T{}) : ny_(ny), nx_(nx), data_(ny * nx, fill) {}

  std::size_t ny() const noexcept { return ny_; }
  std::size_t nx() const noexcept { return nx_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t y, std::size_t x) { return data_[y * nx_ + x]; }
  const T& operator()(std::size_t y, std::size_t x) const { return data_[y * nx_ + x]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> span() noexcept { return data_; }
  std::span<const T> span() const noexcept { return data_; }
  std::vector<T>& vector() noexcept { return data_; }
  const std::vector<T>& vector() const noexcept { return data_; }

  auto begin() noexcept { return data_.begin(); }
  auto end() noexcept { return data_.end(); }
  auto begin() const noexcept { return data_.begin(); }
  auto end() const noexcept { return data_.end(); }

  bool same_shape(const Grid& other) const noexcept { return ny_ == other.ny_ && nx_ == other.nx_; }

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  std::size_t ny_ = 0;
  std::size_t nx_ = 0;
  std::vector<T> data_;
};

using ComplexGrid = Grid<cplx>;
using RealGrid = Grid<double>;
using MaskGrid = Grid<unsigned char>;

template <typename T>
double sum_norm(const Grid<T>& g) {
  double s = 0.0;
  for (const auto& v : g) s += std::norm(v);
  return s;
}

inline double sum(const RealGrid& g) {
  double s = 0.0;
  for (double v : g) s += v;
  return s;
}

inline bool all_finite(const ComplexGrid& g) {
  for (const auto& v : g)
    if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) return false;
  return true;
}

inline bool all_finite(const RealGrid& g) {
  for (double v : g)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace pulseprobe
