#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "pulseprobe/fft.hpp"
#include "pulseprobe/wavefield.hpp"
#include "pulseprobe/window.hpp"

using namespace pulseprobe;

TEST(Fft2Unitary, ZerosStayZero) {
  WaveField f = make_field(64, 64, 1e-7, 15e-9);
  WaveField g = fft2_unitary(f);
  for (const auto& v : g.values) EXPECT_EQ(v, cplx(0.0));
  WaveField h = ifft2_unitary(f);
  for (const auto& v : h.values) EXPECT_EQ(v, cplx(0.0));
}

TEST(Fft2Unitary, CenteredDeltaIsFlat) {
  WaveField f = make_field(64, 64, 1e-7, 15e-9);
  f.values(32, 32) = 1.0;
  WaveField g = fft2_unitary(f);
  for (const auto& v : g.values) EXPECT_NEAR(std::abs(v), 1.0 / 64.0, 1e-15);
  // A centred delta has zero phase everywhere in the centred convention.
  for (const auto& v : g.values) EXPECT_NEAR(v.imag(), 0.0, 1e-15);
}

TEST(Fft2Unitary, MatchesDirectDft) {
  for (std::size_t ny : {4u, 8u, 16u}) {
    const std::size_t nx = ny == 8 ? 6 : ny;
    WaveField f = oracle::random_field(ny, nx, 7 + static_cast<unsigned>(ny));
    EXPECT_LT(oracle::max_abs_diff(fft2_unitary(f).values, oracle::direct_dft(f.values, -1)), 1e-10) << ny << "x" << nx;
    EXPECT_LT(oracle::max_abs_diff(ifft2_unitary(f).values, oracle::direct_dft(f.values, +1)), 1e-10) << ny << "x" << nx;
  }
}

TEST(Fft2Unitary, RoundTripAndParseval) {
  WaveField f = oracle::random_field(32, 32, 3);
  WaveField g = fft2_unitary(f);
  EXPECT_NEAR(g.energy(), f.energy(), 1e-10 * f.energy());
  EXPECT_LT(oracle::max_abs_diff(ifft2_unitary(g).values, f.values), 1e-10);
}

TEST(Fft2Unitary, RejectsInvalidFields) {
  WaveField f = oracle::random_field(16, 16, 1);
  f.values(3, 3) = cplx(std::nan(""), 0.0);
  EXPECT_THROW(fft2_unitary(f), Error);
  WaveField odd = oracle::random_field(15, 16, 1);
  EXPECT_THROW(fft2_unitary(odd), Error);
  WaveField nopitch = oracle::random_field(16, 16, 1, 0.0);
  EXPECT_THROW(ifft2_unitary(nopitch), Error);
}

static IntensityFrame frame_of(std::size_t ny, std::size_t nx, double fill = 0.0) {
  IntensityFrame f;
  f.counts = RealGrid(ny, nx, fill);
  f.pitch = 13.5e-6;
  return f;
}

TEST(Bin2, UniformOnes) {
  IntensityFrame out = bin2(frame_of(4, 4, 1.0));
  ASSERT_EQ(out.ny(), 2u);
  ASSERT_EQ(out.nx(), 2u);
  for (double v : out.counts) EXPECT_EQ(v, 4.0);
  EXPECT_DOUBLE_EQ(out.pitch, 27e-6);
}

TEST(Bin2, SinglePixel) {
  IntensityFrame f = frame_of(6, 6);
  f.counts(3, 4) = 7.0;
  IntensityFrame out = bin2(f);
  EXPECT_EQ(out.counts(1, 2), 7.0);
  EXPECT_EQ(out.total(), 7.0);
}

TEST(Bin2, ConservesTotals) {
  std::mt19937 rng(5);
  std::uniform_real_distribution<double> u(0.0, 100.0);
  IntensityFrame f = frame_of(8, 8);
  for (auto& v : f.counts) v = std::floor(u(rng));
  EXPECT_EQ(bin2(f).total(), f.total());
}

TEST(Bin2, OddDimensionIsShapeError) {
  try {
    bin2(frame_of(5, 4));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Shape);
  }
}

TEST(PadCenter, DefaultSizes) {
  IntensityFrame f = frame_of(500, 500, 1.0);
  IntensityFrame out = pad_center(f, 512, 512);
  ASSERT_EQ(out.ny(), 512u);
  EXPECT_EQ(out.counts(5, 6), 0.0);
  EXPECT_EQ(out.counts(6, 6), 1.0);
  EXPECT_EQ(out.counts(505, 505), 1.0);
  EXPECT_EQ(out.counts(506, 505), 0.0);
  EXPECT_EQ(out.total(), f.total());
}

TEST(PadCenter, IdentityAndOddMargin) {
  IntensityFrame f = frame_of(4, 4, 2.0);
  EXPECT_EQ(pad_center(f, 4, 4).counts, f.counts);

  IntensityFrame g = frame_of(3, 3, 1.0);
  IntensityFrame out = pad_center(g, 6, 6);
  // One row/column of margin on the low side, two on the high side.
  EXPECT_EQ(out.counts(0, 1), 0.0);
  EXPECT_EQ(out.counts(1, 1), 1.0);
  EXPECT_EQ(out.counts(3, 3), 1.0);
  EXPECT_EQ(out.counts(4, 3), 0.0);
  EXPECT_EQ(out.counts(3, 4), 0.0);
  EXPECT_EQ(out.total(), 9.0);
}

TEST(PadCenter, SmallerTargetIsShapeError) { EXPECT_THROW(pad_center(frame_of(8, 8), 4, 8), Error); }

TEST(FourierShift, IntegerShiftIsRoll) {
  ComplexGrid g = oracle::random_grid(8, 8, 11);
  ComplexGrid s = fourier_shift(g, Vec2{2.0, -1.0});
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 8; ++x) EXPECT_LT(std::abs(s(y, x) - g((y + 8 - 1) % 8, (x + 2) % 8)), 1e-12);
}

TEST(FourierShift, AdjointIsNegativeShift) {
  ComplexGrid a = oracle::random_grid(16, 16, 1);
  ComplexGrid b = oracle::random_grid(16, 16, 2);
  const Vec2 s{0.3, -0.7};
  ComplexGrid sa = fourier_shift(a, s);
  ComplexGrid sb = fourier_shift(b, Vec2{-s.x, -s.y});
  cplx lhs = 0.0, rhs = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    lhs += std::conj(sa[i]) * b[i];
    rhs += std::conj(a[i]) * sb[i];
  }
  EXPECT_LT(std::abs(lhs - rhs), 1e-10);
}

TEST(Window, ExtractAndAddAreAdjoint) {
  ComplexGrid object = oracle::random_grid(40, 40, 4);
  ComplexGrid patch = oracle::random_grid(16, 16, 5);
  const Window w = locate_window(Vec2{0.37e-6, -0.52e-6}, Vec2{}, 1e-7, 40, 40, 16, 16);
  EXPECT_EQ(w.ix0, 12 + 3);
  EXPECT_EQ(w.iy0, 12 - 6);
  EXPECT_NEAR(w.frac.x, 0.7, 1e-9);
  EXPECT_NEAR(w.frac.y, 0.8, 1e-9);
  ComplexGrid ext;
  extract_window(object, w, ext);
  ComplexGrid acc(40, 40);
  add_window(acc, patch, w);
  cplx lhs = 0.0, rhs = 0.0;
  for (std::size_t i = 0; i < ext.size(); ++i) lhs += std::conj(ext[i]) * patch[i];
  for (std::size_t i = 0; i < acc.size(); ++i) rhs += std::conj(object[i]) * acc[i];
  EXPECT_LT(std::abs(lhs - rhs), 1e-9);
}

TEST(Window, DisplaceProbeAdjoint) {
  ComplexGrid a = oracle::random_grid(16, 16, 6);
  ComplexGrid b = oracle::random_grid(16, 16, 7);
  const Window w = locate_window(Vec2{0.37e-6, -0.52e-6}, Vec2{}, 1e-7, 40, 40, 16, 16);
  ComplexGrid da;
  displace_probe(a, w, da);
  ComplexGrid ub = b;
  undisplace_inplace(ub, w);
  cplx lhs = 0.0, rhs = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    lhs += std::conj(da[i]) * b[i];
    rhs += std::conj(a[i]) * ub[i];
  }
  EXPECT_LT(std::abs(lhs - rhs), 1e-10);
}

TEST(Window, OutsideGridThrows) {
  ComplexGrid object(32, 32, 1.0);
  const Window w = locate_window(Vec2{2e-6, 0.0}, Vec2{}, 1e-7, 32, 32, 16, 16);
  ComplexGrid out;
  EXPECT_THROW(extract_window(object, w, out), Error);
}
