#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "pulseprobe/analysis.hpp"
#include "pulseprobe/config.hpp"
#include "pulseprobe/engine.hpp"
#include "pulseprobe/error.hpp"
#include "pulseprobe/image.hpp"
#include "pulseprobe/io.hpp"
#include "pulseprobe/log.hpp"
#include "pulseprobe/pipeline.hpp"
#include "pulseprobe/positions.hpp"
#include "pulseprobe/propagation.hpp"
#include "pulseprobe/schedule.hpp"
#include "pulseprobe/simulator.hpp"

namespace pulseprobe {

// Each stage reads its inputs from disk and writes one output directory whose
// manifest records the config hash and the tree hashes of the inputs, so a rerun
// with identical inputs reproduces the same bytes.

/// Error raised inside a stage, tagged with the stage name for the CLI.
class StageError : public Error {
 public:
  StageError(const std::string& stage, const Error& e) : Error(e.kind(), strip(e.what())), stage_(stage) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  static std::string strip(const std::string& what) {
    const auto p = what.find(": ");
    return p == std::string::npos ? what : what.substr(p + 2);
  }
  std::string stage_;
};

template <typename F>
auto run_stage(const std::string& name, F&& body) {
  const auto t0 = std::chrono::steady_clock::now();
  log().info("stage {} started", name);
  try {
    if constexpr (std::is_void_v<decltype(body())>) {
      body();
      log().info("stage {} finished in {:.1f} s", name, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    } else {
      auto r = body();
      log().info("stage {} finished in {:.1f} s", name, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
      return r;
    }
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError(name, e);
  } catch (const std::bad_alloc&) {
    throw StageError(name, Error(ErrorKind::Numeric, "out of memory"));
  }
}

inline Provenance provenance(const std::string& stage, const RunConfig& cfg,
                             const std::vector<std::pair<std::string, fs::path>>& inputs) {
  Provenance p;
  p.stage = stage;
  p.config_hash = config_hash(cfg);
  for (const auto& [name, path] : inputs) p.inputs[name] = sha256_tree(path);
  return p;
}

inline json geometry_json(const Geometry& g) {
  return json{{"wavelength", g.wavelength}, {"detector_distance", g.detector_distance}, {"detector_pitch", g.detector_pitch},
              {"grid_n", g.grid_n}, {"pupil_distance", g.pupil_distance}};
}

/// Simulated raw frames (with the dark frame) in `out/raw` and the truth in `out/truth`.
inline void stage_simulate(const RunConfig& cfg, const fs::path& out) {
  run_stage("simulate", [&] {
    SimulatedData d = simulate_dataset(cfg.simulation);
    FrameContainer c;
    c.frames = std::move(d.raw);
    c.positions = nominal_estimates(c.frames);
    c.dark = d.dark;
    c.geometry = geometry_json(cfg.geometry(cfg.simulation.raw_pitch, cfg.simulation.raw_n));
    c.provenance = provenance("simulate", cfg, {});
    write_container(out / "raw", c);
    write_truth(out / "truth", d.truth);
    log().info("simulated {} frames", c.frames.size());
  });
}

inline void stage_preprocess(const RunConfig& cfg, const fs::path& in, const fs::path& out) {
  run_stage("preprocess", [&] {
    FrameContainer raw = read_container(in);
    PipelineConfig pc = cfg.pipeline;
    if (cfg.subtract_dark) pc.dark_frame = raw.dark;
    FrameContainer c;
    c.frames = preprocess(raw.frames, pc);
    c.positions = raw.positions;
    c.geometry = geometry_json(cfg.geometry(c.frames.frames.front().pitch, c.frames.nx()));
    c.provenance = provenance("preprocess", cfg, {{"raw", in}});
    write_container(out, c);
  });
}

/// Design object and nominal probe used as the model for position correction: the
/// configured Siemens star and the fundamental Hermite-Gauss mode.
struct CorrectionModel {
  WaveField object;
  WaveField probe;
  Vec2 field_lo;
  Vec2 field_hi;
};

inline CorrectionModel correction_model(const RunConfig& cfg, const FrameSet& frames, double pitch) {
  CorrectionModel m;
  const std::size_t n = frames.nx();
  m.probe = hermite_gauss_modes(n, pitch, cfg.wavelength, cfg.simulation.probe.waist, 1, cfg.simulation.probe.curvature_radius)[0];
  const Vec2 half = search_half_span(cfg.correction.coarse);
  double reach = 0.0;
  for (const auto& f : frames.frames)
    reach = std::max({reach, std::abs(f.nominal_position.x) + half.x, std::abs(f.nominal_position.y) + half.y});
  const auto side = 2 * static_cast<std::size_t>(std::ceil(reach / pitch + 0.5 * static_cast<double>(n) + 2.0 * cfg.correction.coarse.cell_pixels + 4.0));
  m.object = make_siemens_star(cfg.simulation.star, pitch, side, side, cfg.wavelength);
  const SimulationPlan plan = plan_scans(cfg.simulation.scans);
  m.field_lo = plan.field_lo;
  m.field_hi = plan.field_hi;
  return m;
}

/// State with a single probe shared by every frame (rank 1).
inline ReconState shared_probe_state(const WaveField& object, Vec2 center, const WaveField& probe,
                                     const std::vector<PositionEstimate>& positions) {
  ReconState s;
  s.object = object;
  s.object_center = center;
  s.positions = positions;
  const auto n = static_cast<Eigen::Index>(positions.size());
  const double rn = std::sqrt(static_cast<double>(positions.size()));
  auto& b = s.basis;
  b.ny = probe.ny();
  b.nx = probe.nx();
  b.pitch = probe.pitch;
  b.wavelength = probe.wavelength;
  b.M.resize(static_cast<Eigen::Index>(probe.values.size()), 1);
  for (std::size_t i = 0; i < probe.values.size(); ++i) b.M(static_cast<Eigen::Index>(i), 0) = rn * probe.values[i];
  b.Vhat = Eigen::MatrixXcd::Constant(n, 1, cplx(1.0 / rn, 0.0));
  b.sigma = Eigen::VectorXd::Constant(1, b.M.col(0).norm());
  return s;
}

struct CorrectionResult {
  std::vector<PositionEstimate> positions;
  JitterStats jitter;           // plain PCA of the accepted displacements
  JitterStats jitter_in_field;  // corrected for the acceptance window
  std::size_t accepted = 0;
};

inline CorrectionResult correct_positions(const RunConfig& cfg, const FrameSet& frames, const std::vector<PositionEstimate>& start,
                                          double pitch) {
  const CorrectionModel model = correction_model(cfg, frames, pitch);
  CorrectionResult r;
  r.positions = coarse_correct_all(frames, start, model.object, Vec2{}, model.probe, cfg.correction.coarse);
  ReconState st = shared_probe_state(model.object, Vec2{}, model.probe, r.positions);
  RefineTracker tracker;
  RefineConfig rc = cfg.schedule.refine;
  rc.field = std::make_pair(model.field_lo, model.field_hi);
  for (std::size_t i = 0; i < cfg.correction.refine_passes; ++i)
    st.positions = refine_positions(st, frames, cfg.correction.max_shift_px, &tracker, rc);
  r.positions = st.positions;
  for (const auto& p : r.positions) r.accepted += p.status == FrameStatus::Accepted;
  r.jitter = jitter_statistics(r.positions);
  r.jitter_in_field = jitter_statistics_in_field(r.positions, model.field_lo, model.field_hi, cfg.correction.field_dilation);
  return r;
}

inline void stage_correct(const RunConfig& cfg, const fs::path& in, const fs::path& out) {
  run_stage("correct-positions", [&] {
    FrameContainer c = read_container(in);
    const Geometry g = cfg.geometry(c.frames.frames.front().pitch, c.frames.nx());
    const double pitch = recon_pixel_size(g);
    json summary;
    std::vector<PositionEstimate> pos = c.positions;
    if (cfg.correction.enabled) {
      const CorrectionResult r = correct_positions(cfg, c.frames, c.positions, pitch);
      pos = r.positions;
      auto js = [](const JitterStats& s) {
        return json{{"axis_angle", s.axis_angle}, {"sigma_major", s.sigma_major}, {"sigma_minor", s.sigma_minor}};
      };
      summary = json{{"accepted", r.accepted}, {"frames", pos.size()},
                     {"accepted_fraction", static_cast<double>(r.accepted) / static_cast<double>(pos.size())},
                     {"jitter", js(r.jitter)}, {"jitter_in_field", js(r.jitter_in_field)}};
      log().info("accepted {}/{} frames, sigma_major {:.3f} um", r.accepted, pos.size(), r.jitter_in_field.sigma_major * 1e6);
    } else {
      summary = json{{"accepted", pos.size()}, {"frames", pos.size()}, {"accepted_fraction", 1.0}};
    }
    write_positions(out, pos, summary, provenance("correct-positions", cfg, {{"frames", in}}));
  });
}

/// Reconstruction from the preprocessed container; positions come from `positions_dir`
/// when given, otherwise from the container's table.
inline ReconState stage_reconstruct(const RunConfig& cfg, const fs::path& in, const std::optional<fs::path>& positions_dir,
                                    const fs::path& out) {
  return run_stage("reconstruct", [&] {
    FrameContainer c = read_container(in);
    std::vector<std::pair<std::string, fs::path>> inputs{{"frames", in}};
    std::vector<PositionEstimate> pos = c.positions;
    if (positions_dir) {
      pos = read_positions(*positions_dir);
      if (pos.size() != c.frames.size()) throw Error(ErrorKind::Input, "positions and frames differ in count");
      inputs.emplace_back("positions", *positions_dir);
    }
    auto [frames, accepted] = accepted_subset(c.frames, pos);
    if (frames.empty()) throw Error(ErrorKind::Input, "no accepted frames to reconstruct");
    const Geometry g = cfg.geometry(frames.frames.front().pitch, frames.nx());
    ScheduleConfig sc = cfg.schedule;
    sc.engine.rank = std::min(sc.engine.rank, frames.size());
    ScheduleResult r = run_schedule(frames, accepted, g, sc, [](const ReconState& s) {
      if (s.iteration % 10 == 0) log().debug("iteration {} error {:.6g}", s.iteration, s.errors.back());
    });
    const Provenance prov = provenance("reconstruct", cfg, inputs);
    write_checkpoint(out, r.state, prov);
    for (const auto& snap : r.snapshots) {
      ReconState s = r.state;
      s.object = snap.object;
      s.basis = snap.basis;
      s.errors.resize(snap.iteration);
      s.iteration = snap.iteration;
      s.dm_iterations = std::min(s.dm_iterations, snap.iteration);
      char name[32];
      std::snprintf(name, sizeof name, "%06zu", snap.iteration);
      write_checkpoint(out / "snapshots" / name, s, prov);
    }
    return r.state;
  });
}

inline void write_rgb(const fs::path& p, const RgbImage& img) { write_png(p.string(), img); }

/// Mode weights, per-pulse statistics and histograms, renders of the object and the
/// components, and the focus search on the principal component.
inline json stage_analyze(const RunConfig& cfg, const fs::path& in, const fs::path& out) {
  return run_stage("analyze", [&] {
    ReconState s = read_checkpoint(in);
    std::error_code ec;
    fs::remove_all(out, ec);
    fs::create_directories(out / "components", ec);
    if (ec) throw Error(ErrorKind::Io, "cannot create " + out.string());

    const auto w = mode_weights(s.basis);
    {
      std::string csv = "mode,sigma,weight\n";
      for (std::size_t i = 0; i < w.size(); ++i)
        csv += std::to_string(i) + ',' + format_double(s.basis.sigma(static_cast<Eigen::Index>(i))) + ',' + format_double(w[i]) + '\n';
      write_bytes(out / "mode_weights.csv", csv);
    }
    std::vector<WaveField> probes;
    std::vector<Vec2> offsets;
    for (std::size_t j = 0; j < s.frame_count(); ++j) {
      probes.push_back(s.probe(j));
      offsets.push_back(s.positions[j].best() - s.positions[j].nominal);
    }
    const PulseStats ps = pulse_statistics(probes, cfg.analysis.reference, offsets, cfg.analysis.histogram);
    write_pulse_csv((out / "pulses.csv").string(), ps);
    write_histogram_csv((out / "intensity_histogram.csv").string(), ps.intensity_histogram);
    write_histogram_csv((out / "displacement_histogram.csv").string(), ps.displacement_histogram);

    write_rgb(out / "object.png", render_complex(s.object));
    for (std::size_t i = 0; i < s.basis.rank(); ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "%02zu.png", i);
      write_rgb(out / "components" / name, render_complex(s.basis.component(i)));
    }

    json focus;
    try {
      const FocusResult f = find_focus(s.basis.component(0), cfg.analysis.focus_z_min, cfg.analysis.focus_z_max, cfg.analysis.focus_steps);
      std::string csv = "z_m,width_m\n";
      for (std::size_t i = 0; i < f.z.size(); ++i) csv += format_double(f.z[i]) + ',' + format_double(f.width[i]) + '\n';
      write_bytes(out / "focus.csv", csv);
      focus = json{{"z_focus", f.z_focus}, {"width_at_focus", f.width_at_focus}};
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::Range) throw;
      log().warn("focus search: {}", e.what());
      focus = json{{"error", e.what()}};
    }

    json summary{{"mode_weights", w},
                 {"relative_std", ps.relative_std()},
                 {"median_displacement", ps.median_displacement()},
                 {"frames", ps.frames.size()},
                 {"focus", focus},
                 {"provenance", provenance("analyze", cfg, {{"checkpoint", in}}).to_json()}};
    write_json(out / "summary.json", summary);
    return summary;
  });
}

/// Pupil-plane back-propagation of every component and focal-series sections of the
/// principal one.
inline void stage_propagate(const RunConfig& cfg, const fs::path& in, const fs::path& out) {
  run_stage("propagate", [&] {
    ReconState s = read_checkpoint(in);
    std::error_code ec;
    fs::remove_all(out, ec);
    fs::create_directories(out / "pupil", ec);
    if (ec) throw Error(ErrorKind::Io, "cannot create " + out.string());
    const Geometry g = cfg.geometry(cfg.wavelength * cfg.detector_distance / (static_cast<double>(s.basis.nx) * s.basis.pitch),
                                    s.basis.nx);
    for (std::size_t i = 0; i < s.basis.rank(); ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "%02zu.png", i);
      write_rgb(out / "pupil" / name, render_complex(backpropagate_to_pupil(s.basis.component(i), g)));
    }
    const auto planes = focal_series(s.basis.component(0), cfg.analysis.focus_z_min, cfg.analysis.focus_z_max,
                                     cfg.analysis.section_planes);
    const auto [h, v] = focal_sections(planes);
    write_rgb(out / "section_horizontal.png", render_gray(h));
    write_rgb(out / "section_vertical.png", render_gray(v));
    write_json(out / "manifest.json", json{{"format", "pulseprobe-propagation"},
                                           {"planes", planes.size()},
                                           {"z_min", cfg.analysis.focus_z_min},
                                           {"z_max", cfg.analysis.focus_z_max},
                                           {"provenance", provenance("propagate", cfg, {{"checkpoint", in}}).to_json()}});
  });
}

}  // namespace pulseprobe
