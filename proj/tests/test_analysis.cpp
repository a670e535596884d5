#include <gtest/gtest.h>

#include <filesystem>
#include <numbers>

#include "oracles.hpp"
#include "pulseprobe/analysis.hpp"
#include "pulseprobe/compare.hpp"
#include "pulseprobe/image.hpp"

using namespace pulseprobe;

namespace {

WaveField gaussian(std::size_t n, double pitch, double w0, Vec2 c = {}) {
  WaveField f = make_field(n, n, pitch, 15e-9);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      const double xx = (static_cast<double>(x) - static_cast<double>(n / 2)) * pitch - c.x;
      const double yy = (static_cast<double>(y) - static_cast<double>(n / 2)) * pitch - c.y;
      f.values(y, x) = std::exp(-(xx * xx + yy * yy) / (w0 * w0));
    }
  return f;
}

}  // namespace

TEST(Quantile, InterpolatesLinearly) {
  const std::vector<double> v{4.0, 1.0, 3.0, 2.0};
  EXPECT_DOUBLE_EQ(quantile(v, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(quantile(v, 1.0), 4.0);
  EXPECT_DOUBLE_EQ(median(v), 2.5);
  EXPECT_DOUBLE_EQ(quantile(v, 1.0 / 3.0), 2.0);
}

TEST(Histogram, CountsEverySample) {
  std::vector<double> v;
  for (int i = 0; i < 1000; ++i) v.push_back(std::sin(0.37 * i));
  HistogramConfig cfg;
  cfg.bins = 20;
  const Histogram h = make_histogram(v, cfg);
  ASSERT_EQ(h.counts.size(), 20u);
  ASSERT_EQ(h.edges.size(), 21u);
  std::size_t total = 0;
  for (auto c : h.counts) total += c;
  EXPECT_EQ(total, v.size());
  for (std::size_t i = 1; i < h.edges.size(); ++i) EXPECT_GT(h.edges[i], h.edges[i - 1]);
}

TEST(PulseStatistics, IdenticalProbes) {
  std::vector<WaveField> p(6, gaussian(32, 1e-7, 4e-7));
  const PulseStats s = pulse_statistics(p);
  for (double r : s.rel_intensity) EXPECT_NEAR(r, 1.0, 1e-12);
  EXPECT_NEAR(s.relative_std(), 0.0, 1e-12);
  EXPECT_NEAR(s.median_displacement(), 0.0, 1e-15);
}

TEST(PulseStatistics, ShiftedProbeDisplacement) {
  const double pitch = 162e-9;
  std::vector<WaveField> p{gaussian(128, pitch, 2e-6), gaussian(128, pitch, 2e-6, {8e-6, 0.0}),
                           gaussian(128, pitch, 2e-6, {0.0, -8e-6})};
  const PulseStats s = pulse_statistics(p);
  EXPECT_NEAR(s.com_displacement[0], 0.0, 1e-12);
  EXPECT_NEAR(s.com_displacement[1], 8e-6, 0.5 * pitch);
  EXPECT_NEAR(s.com_displacement[2], 8e-6, 0.5 * pitch);
  EXPECT_NEAR(s.com[2].y, -8e-6, 0.5 * pitch);
}

TEST(PulseStatistics, OffsetsAddToPointing) {
  std::vector<WaveField> p(3, gaussian(32, 1e-7, 4e-7));
  const PulseStats s = pulse_statistics(p, Vec2{}, {{3e-6, 4e-6}, {0.0, 0.0}, {-6e-6, 8e-6}});
  EXPECT_NEAR(s.com_displacement[0], 5e-6, 1e-15);
  EXPECT_NEAR(s.com_displacement[2], 10e-6, 1e-15);
}

TEST(PulseStatistics, ZeroEnergyProbeIsLeftOut) {
  std::vector<WaveField> p(3, gaussian(16, 1e-7, 3e-7));
  for (auto& v : p[1].values) v = 0.0;
  const PulseStats s = pulse_statistics(p);
  EXPECT_EQ(s.frames, (std::vector<std::size_t>{0, 2}));
  for (auto& v : p[0].values) v = 0.0;
  EXPECT_THROW(pulse_statistics(p), Error);
}

TEST(PulseStatistics, RelativeStdOfKnownEnergies) {
  std::vector<WaveField> p;
  const std::vector<double> e{0.5, 1.0, 1.5, 2.0};
  for (double v : e) {
    WaveField f = gaussian(16, 1e-7, 3e-7);
    const double s = std::sqrt(v / f.energy());
    for (auto& x : f.values) x *= s;
    p.push_back(f);
  }
  // mean 1.25, sample std sqrt(5/12)
  EXPECT_NEAR(pulse_statistics(p).relative_std(), std::sqrt(5.0 / 12.0) / 1.25, 1e-12);
}

TEST(ModeWeights, RankOneAndOracle) {
  ProbeStack s;
  s.ny = 1;
  s.nx = 90;
  s.pitch = 1e-7;
  s.wavelength = 15e-9;
  const Eigen::VectorXcd v = oracle::random_matrix(90, 1, 3).col(0);
  s.P = v * Eigen::RowVectorXcd::Ones(7);
  const auto w1 = mode_weights(svd_truncate(s, 3));
  EXPECT_EQ(w1[0], 1.0);
  EXPECT_NEAR(w1[1], 0.0, 1e-7);
  EXPECT_NEAR(w1[2], 0.0, 1e-7);

  s.P = oracle::random_matrix(90, 16, 4);
  const auto w = mode_weights(svd_truncate(s, 5));
  Eigen::JacobiSVD<Eigen::MatrixXcd> svd(s.P);
  const auto sv = svd.singularValues();
  for (int i = 0; i < 5; ++i) EXPECT_NEAR(w[static_cast<std::size_t>(i)], sv(i) / sv(0), 1e-10);
  for (std::size_t i = 1; i < w.size(); ++i) EXPECT_LE(w[i], w[i - 1]);
}

TEST(ModeWeights, ZeroBasisIsError) {
  EigenBasis b;
  EXPECT_THROW(mode_weights(b), Error);
  b.sigma = Eigen::VectorXd::Zero(2);
  EXPECT_THROW(mode_weights(b), Error);
}

TEST(BeamWidth, GaussianIsWaist) {
  const double pitch = 1e-7, w0 = 1.2e-6;
  const Vec2 w = beam_width(gaussian(128, pitch, w0));
  EXPECT_NEAR(w.x, w0, 1e-3 * w0);
  EXPECT_NEAR(w.y, w0, 1e-3 * w0);
}

TEST(FindFocus, WaistUpstream) {
  // Waist placed 2 mm before the input plane.
  const double pitch = 162e-9, w0 = 3e-6;
  const WaveField waist = gaussian(256, pitch, w0);
  const WaveField at_sample = propagate_angular_spectrum(waist, 2e-3).field;
  const FocusResult r = find_focus(at_sample, -20e-3, 20e-3, 41);
  EXPECT_NEAR(r.z_focus, -2e-3, 1e-3);
  EXPECT_NEAR(r.width_at_focus, w0, 0.05 * w0);
  EXPECT_EQ(r.z.size(), 41u);
}

TEST(FindFocus, CollimatedOutsideRangeIsError) {
  const double pitch = 162e-9;
  const WaveField waist = gaussian(128, pitch, 1.5e-6);
  const WaveField far = propagate_angular_spectrum(waist, 1e-3).field;
  // The waist lies 1 mm upstream, outside [0, 4] mm.
  EXPECT_THROW(find_focus(far, 0.0, 4e-3, 9), Error);
  EXPECT_THROW(find_focus(far, -1e-3, 1e-3, 2), Error);
}

TEST(RenderComplex, HueFollowsPhase) {
  WaveField f = make_field(4, 8, 1e-7, 15e-9);
  for (std::size_t x = 0; x < 8; ++x)
    for (std::size_t y = 0; y < 4; ++y) f.values(y, x) = std::polar(1.0, 2.0 * std::numbers::pi * static_cast<double>(x) / 8.0);
  const RgbImage img = render_complex(f);
  // Positive real values are pure red.
  EXPECT_EQ(img.pixel(0, 0)[0], 255);
  EXPECT_EQ(img.pixel(0, 0)[1], 0);
  EXPECT_EQ(img.pixel(0, 0)[2], 0);
  // Phase pi is cyan, and the pattern repeats down the columns.
  EXPECT_EQ(img.pixel(2, 4)[0], 0);
  EXPECT_EQ(img.pixel(2, 4)[1], 255);
  EXPECT_EQ(img.pixel(2, 4)[2], 255);
  for (std::size_t x = 0; x < 8; ++x)
    for (int c = 0; c < 3; ++c) EXPECT_EQ(img.pixel(0, x)[c], img.pixel(3, x)[c]);
}

TEST(RenderComplex, BrightestAtPeakAndZeroIsBlack) {
  WaveField f = gaussian(16, 1e-7, 4e-7, {1e-7, -2e-7});
  const RgbImage img = render_complex(f);
  EXPECT_EQ(img.pixel(6, 9)[0], 255);
  for (std::size_t i = 0; i < img.data.size(); i += 3) EXPECT_LE(img.data[i], 255);
  for (auto& v : f.values) v = 0.0;
  for (auto b : render_complex(f).data) EXPECT_EQ(b, 0);
}

TEST(Png, RoundTrip) {
  const RgbImage img = render_complex(oracle::random_field(7, 5, 1));
  const auto p = std::filesystem::temp_directory_path() / "pulseprobe_png_roundtrip.png";
  write_png(p.string(), img);
  const RgbImage back = read_png(p.string());
  EXPECT_EQ(back.ny, 7u);
  EXPECT_EQ(back.nx, 5u);
  EXPECT_EQ(back.data, img.data);
  std::filesystem::remove(p);
  EXPECT_THROW(read_png(p.string()), Error);
}

TEST(AlignGlobalPhase, RemovesConstantPhase) {
  const ComplexGrid a = oracle::random_grid(8, 8, 2);
  ComplexGrid b = a;
  for (auto& v : b) v *= std::polar(1.0, 1.234);
  EXPECT_LT(oracle::max_abs_diff(align_global_phase(a, b), a), 1e-12);
}

TEST(CompareObjects, RecoversShiftFlipAndRamp) {
  const double pitch = 1e-7;
  WaveField truth = make_field(64, 64, pitch, 15e-9);
  for (std::size_t y = 0; y < 64; ++y)
    for (std::size_t x = 0; x < 64; ++x)
      truth.values(y, x) = 0.3 + 0.7 * (((x / 5) + (y / 7)) % 2) + 0.01 * static_cast<double>(x % 3);
  // Reconstruction: truth shifted by (2, -3) pixels, times an amplitude ramp.
  WaveField recon = make_field(40, 40, pitch, 15e-9);
  for (std::size_t y = 0; y < 40; ++y)
    for (std::size_t x = 0; x < 40; ++x)
      recon.values(y, x) = truth.values(y + 12 - 2, x + 12 + 3) * std::exp(0.01 * static_cast<double>(x) - 0.02 * static_cast<double>(y));
  RealGrid weight(40, 40, 1.0);
  const ObjectComparison c = compare_objects(recon, Vec2{}, truth, Vec2{}, weight);
  EXPECT_EQ(c.shift_y, 2);
  EXPECT_EQ(c.shift_x, -3);
  EXPECT_FALSE(c.flipped);
  EXPECT_NEAR(c.ramp.x, 0.01, 2e-3);
  EXPECT_NEAR(c.ramp.y, -0.02, 2e-3);
  EXPECT_GT(c.correlation, 0.99);
  EXPECT_LT(c.raw_correlation, c.correlation);
}

TEST(CompareEnergies, RemovesRampAndScale) {
  std::vector<double> truth, recon;
  std::vector<Vec2> pos;
  for (int j = 0; j < 50; ++j) {
    const Vec2 p{1e-6 * (j % 7 - 3), 1e-6 * (j % 5 - 2)};
    const double t = 1.0 + 0.3 * std::sin(1.7 * j);
    pos.push_back(p);
    truth.push_back(t);
    recon.push_back(3.0 * t * std::exp(2e4 * p.x - 1e4 * p.y) * (j == 7 ? 5.0 : 1.0));
  }
  const EnergyComparison e = compare_energies(recon, truth, pos);
  EXPECT_NEAR(e.log_scale, std::log(3.0), 1e-9);
  EXPECT_NEAR(e.log_gradient.x, 2e4, 1e-3);
  EXPECT_NEAR(e.log_gradient.y, -1e4, 1e-3);
  EXPECT_LT(e.median_error, 1e-9);
  EXPECT_NEAR(e.relative_error[7], 4.0, 1e-6);
  EXPECT_NEAR(e.deramped[0] / truth[0], 3.0, 1e-9);
}
