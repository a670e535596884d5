// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
// Usage: acceptance <configs dir> [criterion ...]

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numbers>
#include <set>
#include <string>

#include "oracles.hpp"
#include "pulseprobe/pulseprobe.hpp"

using namespace pulseprobe;
namespace fs = std::filesystem;

namespace {

// Tolerances.
constexpr double kPixelSizeTol = 1e-9;
constexpr double kSigmaTol = 1e-9;
constexpr double kAngleTol = 1e-7;
constexpr double kRoundTripTol = 1e-10;
constexpr double kGroupTol = 1e-9;
constexpr double kSvdSeconds = 5.0;
constexpr double kDeskCorrelation = 0.95;
constexpr double kDeskEnergyError = 0.05;
constexpr double kDeskSeconds = 600.0;
constexpr double kStatsRelTol = 0.10;
constexpr double kTargetRelStd = 0.4;
constexpr double kTargetDisplacement = 8e-6;
constexpr double kPositionRmsPx = 1.0;
constexpr double kJitterRelTol = 0.10;
constexpr double kJitterAngleDeg = 5.0;
constexpr double kAcceptLo = 0.55;
constexpr double kAcceptHi = 0.75;
constexpr double kCorrectionSeconds = 300.0;
constexpr double kGradientTol = 1e-5;

struct Outcome {
  bool pass;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Outcome pixel_size() {
  Geometry g;
  g.wavelength = 15e-9;
  g.detector_distance = 0.150;
  g.grid_n = 512;
  g.detector_pitch = 27e-6;
  const double p = recon_pixel_size(g);
  return {std::abs(p - 162e-9) <= kPixelSizeTol, fmt::format("pixel {:.3f} nm", p * 1e9)};
}

Outcome svd_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst_sigma = 0.0, worst_angle = 0.0, worst_round = 0.0;
  for (unsigned seed = 0; seed < 10; ++seed) {
    ProbeStack s;
    s.ny = 64;
    s.nx = 64;
    s.pitch = 1e-7;
    s.wavelength = 15e-9;
    s.P = oracle::random_matrix(64 * 64, 16, 100 + seed);
    Eigen::JacobiSVD<Eigen::MatrixXcd> dense(s.P, Eigen::ComputeThinU | Eigen::ComputeThinV);
    for (std::size_t k : {1, 4, 8}) {
      const EigenBasis b = svd_truncate(s, k);
      for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(k); ++i)
        worst_sigma = std::max(worst_sigma, std::abs(b.sigma(i) - dense.singularValues()(i)));
      worst_angle = std::max(worst_angle, oracle::max_principal_angle(b.Vhat, dense.matrixV().leftCols(static_cast<Eigen::Index>(k))));
    }
    const ProbeStack back = expand_probes(svd_truncate(s, 16));
    worst_round = std::max(worst_round, (back.P - s.P).cwiseAbs().maxCoeff());
  }
  const double t = seconds_since(t0);
  return {worst_sigma <= kSigmaTol && worst_angle < kAngleTol && worst_round <= kRoundTripTol && t < kSvdSeconds,
          fmt::format("sigma {:.2e} angle {:.2e} roundtrip {:.2e} time {:.2f} s", worst_sigma, worst_angle, worst_round, t)};
}

Outcome propagation() {
  const WaveField f = oracle::random_field(128, 128, 7, 162e-9, 15e-9);
  const Propagated a = propagate_angular_spectrum(f, 1.5e-3);
  const double parseval = std::abs(a.field.energy() - f.energy()) / f.energy();
  const double round = oracle::max_abs_diff(propagate_angular_spectrum(a.field, -1.5e-3).field.values, f.values);
  const WaveField two = propagate_angular_spectrum(propagate_angular_spectrum(f, 0.6e-3).field, 0.9e-3).field;
  const double group = oracle::max_abs_diff(two.values, a.field.values);
  return {!a.evanescent_clamped && parseval <= kRoundTripTol && round <= kRoundTripTol && group <= kGroupTol,
          fmt::format("parseval {:.2e} roundtrip {:.2e} group {:.2e}", parseval, round, group)};
}

struct DeskResult {
  Outcome reconstruction;
  Outcome statistics;
};

DeskResult desk_run(const fs::path& configs) {
  RunConfig cfg = load_config(configs / "desk.json");
  const auto t0 = std::chrono::steady_clock::now();
  SimulatedData d = simulate_dataset(cfg.simulation);
  PipelineConfig pc = cfg.pipeline;
  pc.dark_frame = d.dark;
  const FrameSet frames = preprocess(d.raw, pc);
  // Positions are taken as known here; position recovery is checked separately.
  std::vector<PositionEstimate> pos = nominal_estimates(frames);
  for (std::size_t j = 0; j < pos.size(); ++j) pos[j].refined = d.truth.positions[j];
  const Geometry g = cfg.geometry(frames.frames.front().pitch, frames.nx());
  const ReconState s = run_schedule(frames, pos, g, cfg.schedule).state;
  const double t = seconds_since(t0);

  const ObjectComparison oc = compare_objects(s.object, s.object_center, d.truth.object, d.truth.object_center, illumination(s));
  std::vector<double> er, et;
  std::vector<Vec2> at;
  std::vector<WaveField> probes;
  std::vector<Vec2> offsets;
  for (std::size_t j = 0; j < s.frame_count(); ++j) {
    probes.push_back(s.probe(j));
    offsets.push_back(s.positions[j].best() - s.positions[j].nominal);
    er.push_back(probes.back().energy());
    et.push_back(d.truth.probe(j).energy());
    at.push_back(s.positions[j].best());
  }
  const EnergyComparison ec = compare_energies(er, et, at);

  // Relative spread on the energies with the position ramp removed.
  std::vector<WaveField> flat = probes;
  for (std::size_t j = 0; j < flat.size(); ++j) {
    const double r = std::sqrt(ec.deramped[j] / er[j]);
    for (auto& v : flat[j].values) v *= r;
  }
  const PulseStats ps = pulse_statistics(flat, cfg.analysis.reference, offsets);
  const double rs = ps.relative_std(), md = ps.median_displacement();

  DeskResult r;
  r.reconstruction = {oc.correlation > kDeskCorrelation && ec.median_error < kDeskEnergyError && t < kDeskSeconds,
                      fmt::format("object correlation {:.4f} energy median error {:.2f}% time {:.0f} s", oc.correlation,
                                  100.0 * ec.median_error, t)};
  r.statistics = {std::abs(rs - kTargetRelStd) <= kStatsRelTol * kTargetRelStd &&
                      std::abs(md - kTargetDisplacement) <= kStatsRelTol * kTargetDisplacement,
                  fmt::format("relative std {:.3f} (target {:.1f}) median displacement {:.2f} um (target {:.0f})", rs, kTargetRelStd,
                              md * 1e6, kTargetDisplacement * 1e6)};
  return r;
}

Outcome position_correction() {
  RunConfig cfg = parse_config(json{{"simulation", {{"raw_n", 256}}}, {"pipeline", {{"pad", 128}}}});
  const auto t0 = std::chrono::steady_clock::now();
  SimulatedData d = simulate_dataset(cfg.simulation);
  PipelineConfig pc = cfg.pipeline;
  pc.dark_frame = d.dark;
  const FrameSet frames = preprocess(d.raw, pc);
  const double pitch = recon_pixel_size(cfg.geometry(frames.frames.front().pitch, frames.nx()));
  const CorrectionResult r = correct_positions(cfg, frames, nominal_estimates(frames), pitch);
  const double t = seconds_since(t0);

  double se = 0.0;
  for (const auto& p : r.positions) {
    if (p.status != FrameStatus::Accepted) continue;
    const Vec2 e = p.best() - d.truth.positions[p.frame_index];
    se += e.x * e.x + e.y * e.y;
  }
  const double rms = std::sqrt(se / static_cast<double>(r.accepted)) / pitch;
  const double frac = static_cast<double>(r.accepted) / static_cast<double>(r.positions.size());
  const auto& p = cfg.simulation.probe;
  const JitterStats& j = r.jitter_in_field;
  // The axis is only defined modulo 180 degrees.
  double dang = std::remainder(j.axis_angle - p.jitter_axis_angle, std::numbers::pi) * 180.0 / std::numbers::pi;
  dang = std::abs(dang);
  const bool ok = rms < kPositionRmsPx && std::abs(j.sigma_major - p.jitter_sigma_major) <= kJitterRelTol * p.jitter_sigma_major &&
                  dang <= kJitterAngleDeg && frac >= kAcceptLo && frac <= kAcceptHi && t < kCorrectionSeconds;
  return {ok, fmt::format("rms {:.3f} px sigma_major {:.3f} um axis {:.2f} deg accepted {:.1f}% time {:.0f} s", rms,
                          j.sigma_major * 1e6, dang, 100.0 * frac, t)};
}

Outcome focus() {
  const double pitch = 162e-9, w0 = 5e-6;
  const std::size_t n = 512;
  WaveField waist = make_field(n, n, pitch, 15e-9);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      const double xx = (static_cast<double>(x) - static_cast<double>(n / 2)) * pitch;
      const double yy = (static_cast<double>(y) - static_cast<double>(n / 2)) * pitch;
      waist.values(y, x) = std::exp(-(xx * xx + yy * yy) / (w0 * w0));
    }
  // Waist 2 mm upstream of the plane handed to the search.
  const WaveField field = propagate_angular_spectrum(waist, 2e-3).field;
  const FocusResult r = find_focus(field, -20e-3, 20e-3, 41);
  const double step = 40e-3 / 40.0;
  return {std::abs(r.z_focus - (-2e-3)) <= step, fmt::format("focus {:.3f} mm (step {:.1f} mm)", r.z_focus * 1e3, step * 1e3)};
}

Outcome gradient() {
  // Small scan of a random object with varying probes, positions off the pixel grid.
  const std::size_t n = 16;
  WaveField object = oracle::random_field(40, 40, 3);
  for (auto& v : object.values) v = 0.7 * v / std::abs(v) + 0.3;
  std::vector<WaveField> probes;
  std::vector<PositionEstimate> pos;
  FrameSet frames;
  std::mt19937_64 rng(4);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (int iy = 0; iy < 2; ++iy)
    for (int ix = 0; ix < 2; ++ix) {
      WaveField p = make_field(n, n, 1e-7, 15e-9);
      for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x) {
          const double dy = static_cast<double>(y) - 8.0, dx = static_cast<double>(x) - 8.0;
          p.values(y, x) = cplx(1.0 + 0.3 * nd(rng), 0.2 * nd(rng)) * std::exp(-(dx * dx + dy * dy) / 18.0) * std::polar(1.0, 0.03 * dx * dy);
        }
      probes.push_back(p);
      PositionEstimate e;
      e.frame_index = pos.size();
      e.nominal = Vec2{(ix - 0.5) * 3e-7 + 0.4e-7 * nd(rng), (iy - 0.5) * 3e-7 + 0.4e-7 * nd(rng)};
      pos.push_back(e);
      IntensityFrame f;
      f.counts = expected_intensity(object, p, e.nominal, 1.0);
      f.nominal_position = e.nominal;
      f.frame_index = e.frame_index;
      f.pitch = 1.0;
      frames.frames.push_back(f);
    }
  ReconState s = state_from_truth(object, Vec2{}, probes, pos, 2);
  const ComplexGrid noise = oracle::random_grid(40, 40, 9);
  for (std::size_t i = 0; i < noise.size(); ++i) s.object.values[i] += 0.05 * noise[i];

  const MlGradient g = ml_gradient(s, frames);
  const double h = 1e-6;
  double worst = 0.0;
  auto fd_check = [&](const std::function<void(ReconState&, double)>& step, double analytic) {
    ReconState a = s, b = s;
    step(a, h);
    step(b, -h);
    const double fd = (ml_objective(a, frames) - ml_objective(b, frames)) / (2.0 * h);
    worst = std::max(worst, std::abs(fd - analytic) / std::max(std::abs(analytic), 1e-12));
  };
  const ComplexGrid dO = oracle::random_grid(40, 40, 10);
  fd_check([&](ReconState& t, double e) { for (std::size_t i = 0; i < dO.size(); ++i) t.object.values[i] += e * dO[i]; },
           2.0 * engine_detail::re_inner(g.object, dO));
  const Eigen::MatrixXcd dC = oracle::random_matrix(s.basis.Vhat.rows(), s.basis.Vhat.cols(), 11);
  fd_check([&](ReconState& t, double e) { t.basis.Vhat += e * dC.conjugate(); }, 2.0 * engine_detail::re_inner(g.coeff, dC));
  const Eigen::MatrixXcd dM = oracle::random_matrix(s.basis.M.rows(), s.basis.M.cols(), 12);
  fd_check([&](ReconState& t, double e) { t.basis.M += e * dM; }, 2.0 * engine_detail::re_inner(g.comps, dM));

  const std::size_t first = s.errors.size();
  ml_refine(s, frames, 40);
  bool monotone = true;
  for (std::size_t i = first + 1; i < s.errors.size(); ++i) monotone = monotone && s.errors[i] <= s.errors[i - 1];
  return {worst <= kGradientTol && monotone,
          fmt::format("worst relative gradient error {:.2e}, objective {} over {} steps", worst,
                      monotone ? "non-increasing" : "increased", s.errors.size() - first)};
}

Outcome determinism(const fs::path& configs) {
  const RunConfig cfg = load_config(configs / "smoke.json");
  const fs::path base = fs::temp_directory_path() / "pulseprobe_acceptance_threads";
  std::error_code ec;
  fs::remove_all(base, ec);
  std::string hashes[2][2];
  const int threads[2] = {1, 8};
  for (int i = 0; i < 2; ++i) {
    set_threads(threads[i]);
    const fs::path out = base / std::to_string(threads[i]);
    stage_simulate(cfg, out);
    stage_preprocess(cfg, out / "raw", out / "frames");
    stage_correct(cfg, out / "frames", out / "positions");
    stage_reconstruct(cfg, out / "frames", out / "positions", out / "checkpoint");
    hashes[i][0] = sha256_tree(out / "frames");
    hashes[i][1] = sha256_tree(out / "checkpoint");
  }
  set_threads(1);
  fs::remove_all(base, ec);
  const bool same = hashes[0][0] == hashes[1][0] && hashes[0][1] == hashes[1][1];
  return {same, fmt::format("frames {}.. checkpoint {}.. ({})", hashes[0][0].substr(0, 12), hashes[0][1].substr(0, 12),
                            same ? "identical" : "differ")};
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: acceptance <configs dir> [criterion ...]\n");
    return 2;
  }
  const fs::path configs = argv[1];
  std::set<int> only;
  for (int i = 2; i < argc; ++i) only.insert(std::atoi(argv[i]));
  auto wanted = [&](int c) { return only.empty() || only.count(c) > 0; };
  std::setvbuf(stdout, nullptr, _IONBF, 0);
  set_threads(1);

  bool all = true;
  auto report = [&](int c, const std::string& what, const std::function<Outcome()>& f) {
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    all = all && o.pass;
    std::printf("criterion %d %-4s %s: %s\n", c, o.pass ? "PASS" : "FAIL", what.c_str(), o.detail.c_str());
  };

  if (wanted(1)) report(1, "reconstruction pixel size", pixel_size);
  if (wanted(2)) report(2, "truncated SVD against dense oracle", svd_oracle);
  if (wanted(3)) report(3, "angular spectrum propagation", propagation);
  if (wanted(4) || wanted(5)) {
    DeskResult d;
    try {
      d = desk_run(configs);
    } catch (const std::exception& e) {
      d.reconstruction = d.statistics = {false, std::string("error: ") + e.what()};
    }
    if (wanted(4)) report(4, "desk reconstruction", [&] { return d.reconstruction; });
    if (wanted(5)) report(5, "pulse statistics", [&] { return d.statistics; });
  }
  if (wanted(6)) report(6, "position correction", position_correction);
  if (wanted(7)) report(7, "focus search", focus);
  if (wanted(8)) report(8, "likelihood gradient", gradient);
  if (wanted(9)) report(9, "thread-count determinism", [&] { return determinism(configs); });
  return all ? 0 : 1;
}
