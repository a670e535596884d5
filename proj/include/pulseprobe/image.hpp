#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <string>
#include <vector>

#include "pulseprobe/error.hpp"
#include "pulseprobe/grid.hpp"
#include "pulseprobe/wavefield.hpp"

namespace pulseprobe {

/// 8-bit RGB raster, row-major, 3 bytes per pixel.
struct RgbImage {
  std::size_t ny = 0;
  std::size_t nx = 0;
  std::vector<std::uint8_t> data;

  RgbImage() = default;
  RgbImage(std::size_t h, std::size_t w) : ny(h), nx(w), data(3 * h * w, 0) {}
  std::uint8_t* pixel(std::size_t y, std::size_t x) { return &data[3 * (y * nx + x)]; }
  const std::uint8_t* pixel(std::size_t y, std::size_t x) const { return &data[3 * (y * nx + x)]; }
};

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

inline void hsv_to_rgb(double h, double s, double v, std::uint8_t* rgb) {
  h = h - std::floor(h);
  const double c = v * s;
  const double hp = h * 6.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(hp) % 6) {
    case 0: r = c; g = x; break;
    case 1: r = x; g = c; break;
    case 2: g = c; b = x; break;
    case 3: g = x; b = c; break;
    case 4: r = x; b = c; break;
    default: r = c; b = x; break;
  }
  const double m = v - c;
  rgb[0] = to_byte(r + m);
  rgb[1] = to_byte(g + m);
  rgb[2] = to_byte(b + m);
}

/// Amplitude to brightness and phase to hue: hue = phase / 2pi, saturation 1,
/// value = |f| / max |f|. A zero field renders black.
inline RgbImage render_complex(const WaveField& field) {
  RgbImage img(field.ny(), field.nx());
  double peak = 0.0;
  for (const auto& v : field.values) peak = std::max(peak, std::abs(v));
  if (!(peak > 0.0)) return img;
  for (std::size_t y = 0; y < field.ny(); ++y)
    for (std::size_t x = 0; x < field.nx(); ++x) {
      const cplx v = field.values(y, x);
      const double phase = std::arg(v);
      const double hue = (phase < 0.0 ? phase + 2.0 * std::numbers::pi : phase) / (2.0 * std::numbers::pi);
      hsv_to_rgb(hue, 1.0, std::abs(v) / peak, img.pixel(y, x));
    }
  return img;
}

/// Grey-scale rendering of a real map scaled to [0, max].
inline RgbImage render_gray(const RealGrid& g) {
  RgbImage img(g.ny(), g.nx());
  double peak = 0.0;
  for (double v : g) peak = std::max(peak, v);
  if (!(peak > 0.0)) return img;
  for (std::size_t y = 0; y < g.ny(); ++y)
    for (std::size_t x = 0; x < g.nx(); ++x) {
      const std::uint8_t b = to_byte(g(y, x) / peak);
      std::uint8_t* p = img.pixel(y, x);
      p[0] = p[1] = p[2] = b;
    }
  return img;
}

inline void write_png(const std::string& path, const RgbImage& img) {
  if (img.ny == 0 || img.nx == 0) throw Error(ErrorKind::Io, "cannot write an empty image to " + path);
  FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw Error(ErrorKind::Io, "cannot open " + path + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw Error(ErrorKind::Io, "libpng failed writing " + path);
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.nx), static_cast<png_uint_32>(img.ny), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < img.ny; ++y) png_write_row(png, const_cast<png_bytep>(img.pixel(y, 0)));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fclose(fp) != 0) throw Error(ErrorKind::Io, "failed closing " + path);
}

inline RgbImage read_png(const std::string& path) {
  FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw Error(ErrorKind::Io, "cannot open " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  RgbImage img;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw Error(ErrorKind::Io, "libpng failed reading " + path);
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  if (png_get_color_type(png, info) != PNG_COLOR_TYPE_RGB || png_get_bit_depth(png, info) != 8)
    png_error(png, "not an 8-bit RGB image");
  img = RgbImage(png_get_image_height(png, info), png_get_image_width(png, info));
  for (std::size_t y = 0; y < img.ny; ++y) png_read_row(png, img.pixel(y, 0), nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return img;
}

}  // namespace pulseprobe
