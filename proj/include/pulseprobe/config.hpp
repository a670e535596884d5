#pragma once

#include <cstdint>
#include <exception>
#include <filesystem>
#include <set>
#include <type_traits>
#include <string>
#include <vector>

#include <json.hpp>

#include "pulseprobe/analysis.hpp"
#include "pulseprobe/error.hpp"
#include "pulseprobe/io.hpp"
#include "pulseprobe/pipeline.hpp"
#include "pulseprobe/positions.hpp"
#include "pulseprobe/propagation.hpp"
#include "pulseprobe/schedule.hpp"
#include "pulseprobe/simulator.hpp"

namespace pulseprobe {

struct CorrectionConfig {
  bool enabled = true;
  CoarseConfig coarse;
  std::size_t refine_passes = 5;
  double max_shift_px = 1.0;
  double field_dilation = 0.2;
  std::size_t max_increases = 5;
};

struct AnalysisConfig {
  HistogramConfig histogram;
  Vec2 reference;  // centre-of-mass reference, metres from the grid centre
  double focus_z_min = -20e-3;
  double focus_z_max = 20e-3;
  std::size_t focus_steps = 41;
  std::size_t section_planes = 81;
};

/// Everything a run needs, in one JSON document. The far-field geometry of the
/// reconstruction (detector pitch, grid size) follows from the detector and the
/// pipeline settings.
struct RunConfig {
  std::uint64_t seed = 1;
  std::string output = "out";
  double wavelength = 15e-9;
  double detector_distance = 0.150;
  double pupil_distance = 1.48;
  SimulationConfig simulation;
  PipelineConfig pipeline;
  bool subtract_dark = true;
  CorrectionConfig correction;
  ScheduleConfig schedule;
  AnalysisConfig analysis;

  RunConfig() { sync(); }

  /// Copies the shared fields into the module configs.
  void sync() {
    simulation.wavelength = wavelength;
    simulation.detector_distance = detector_distance;
    simulation.seed = seed;
    schedule.engine.seed = seed;
    pipeline.adu_per_photon = simulation.adu_per_photon;
    schedule.refine.field_dilation = correction.field_dilation;
    schedule.refine.max_increases = correction.max_increases;
  }

  Geometry geometry(double frame_pitch, std::size_t grid_n) const {
    Geometry g;
    g.wavelength = wavelength;
    g.detector_distance = detector_distance;
    g.detector_pitch = frame_pitch;
    g.grid_n = grid_n;
    g.pupil_distance = pupil_distance;
    return g;
  }
};

namespace config_detail {

using json = nlohmann::json;

/// Reads one JSON object, rejecting keys that no reader asked for.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw Error(ErrorKind::Config, where() + " must be an object");
  }
  ~Reader() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw Error(ErrorKind::Config, "unknown key '" + child(it.key()) + "'");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
      const auto& v = j_.at(key);
      if (!v.is_number_integer() || v.get<std::int64_t>() < 0) throw Error(ErrorKind::Config, "'" + child(key) + "' must be a non-negative integer");
    }
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw Error(ErrorKind::Config, "invalid value for '" + child(key) + "'");
    }
  }

  void get(const char* key, Vec2& out) {
    std::vector<double> v{out.x, out.y};
    get(key, v);
    if (v.size() != 2) throw Error(ErrorKind::Config, "'" + child(key) + "' needs two numbers");
    out = {v[0], v[1]};
  }

  template <typename F>
  void section(const char* key, F&& body) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    Reader r(j_.at(key), child(key));
    body(r);
  }

  const json& at(const char* key) {
    seen_.insert(key);
    return j_.at(key);
  }
  bool has(const char* key) const { return j_.contains(key); }
  std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  std::string where() const { return path_.empty() ? "config" : "'" + path_ + "'"; }
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline void require(bool ok, const std::string& key, const std::string& why) {
  if (!ok) throw Error(ErrorKind::Config, "'" + key + "' " + why);
}

}  // namespace config_detail

/// Strict parse: unknown keys, wrong types and out-of-range values raise a config
/// error naming the key. Absent keys keep their defaults.
inline RunConfig parse_config(const nlohmann::json& doc) {
  using config_detail::Reader;
  using config_detail::require;
  RunConfig c;
  {
    Reader r(doc, "");
    r.get("seed", c.seed);
    r.get("output", c.output);
    r.section("geometry", [&](Reader& g) {
      g.get("wavelength", c.wavelength);
      g.get("detector_distance", c.detector_distance);
      g.get("pupil_distance", c.pupil_distance);
    });
    r.section("simulation", [&](Reader& s) {
      auto& sc = c.simulation;
      s.get("raw_n", sc.raw_n);
      s.get("raw_pitch", sc.raw_pitch);
      s.get("photons", sc.photons);
      s.get("noiseless", sc.noiseless);
      s.get("adu_per_photon", sc.adu_per_photon);
      s.get("dark_level", sc.dark_level);
      s.get("out_of_field_fraction", sc.out_of_field_fraction);
      s.section("star", [&](Reader& t) {
        t.get("n_spokes", sc.star.n_spokes);
        t.get("outer_radius", sc.star.outer_radius);
        t.get("inner_radius", sc.star.inner_radius);
        double gold = sc.star.t_gold, open = sc.star.t_open;
        t.get("t_gold", gold);
        t.get("t_open", open);
        sc.star.t_gold = gold;
        sc.star.t_open = open;
      });
      s.section("probe", [&](Reader& p) {
        auto& pc = sc.probe;
        p.get("waist", pc.waist);
        p.get("curvature_radius", pc.curvature_radius);
        p.get("mode_count", pc.mode_count);
        p.get("weight_sigma", pc.weight_sigma);
        p.get("intensity_rel_sigma", pc.intensity_rel_sigma);
        p.get("jitter_sigma_major", pc.jitter_sigma_major);
        p.get("jitter_sigma_minor", pc.jitter_sigma_minor);
        p.get("jitter_axis_angle", pc.jitter_axis_angle);
      });
      if (s.has("scans")) {
        const auto& arr = s.at("scans");
        require(arr.is_array() && !arr.empty(), "simulation.scans", "must be a non-empty array");
        sc.scans.clear();
        for (std::size_t i = 0; i < arr.size(); ++i) {
          ScanPlan plan;
          Reader sp(arr[i], "simulation.scans[" + std::to_string(i) + "]");
          sp.get("center", plan.center);
          sp.get("extent", plan.extent);
          sp.get("step", plan.step);
          sp.get("n_positions", plan.n_positions);
          sp.get("repeats_per_position", plan.repeats_per_position);
          sc.scans.push_back(plan);
        }
      }
    });
    r.section("pipeline", [&](Reader& p) {
      p.get("bin_factor", c.pipeline.bin_factor);
      std::size_t pad = c.pipeline.pad_nx;
      p.get("pad", pad);
      c.pipeline.pad_ny = c.pipeline.pad_nx = pad;
      p.get("threshold", c.pipeline.threshold);
      p.get("subtract_dark", c.subtract_dark);
    });
    r.section("correction", [&](Reader& p) {
      auto& k = c.correction;
      p.get("enabled", k.enabled);
      p.get("cell_pixels", k.coarse.cell_pixels);
      p.get("span_sigmas", k.coarse.span_sigmas);
      p.get("floor", k.coarse.floor);
      p.get("refine_passes", k.refine_passes);
      p.get("max_shift_px", k.max_shift_px);
      p.get("field_dilation", k.field_dilation);
      p.get("max_increases", k.max_increases);
    });
    r.section("engine", [&](Reader& p) {
      auto& e = c.schedule.engine;
      p.get("rank", e.rank);
      p.get("dm_iterations", e.dm_iterations);
      p.get("ml_iterations", e.ml_iterations);
      p.get("inner_loops", e.inner_loops);
      p.get("probe_start", e.probe_start);
      p.get("variation_start", e.variation_start);
      p.get("snapshot_every", e.snapshot_every);
      p.get("object_margin", e.object_margin);
      p.get("object_eps", e.object_eps);
      p.get("probe_eps", e.probe_eps);
      p.get("coefficient_eps", e.coefficient_eps);
      p.get("refine_positions", c.schedule.refine_positions);
      p.get("refine_every", c.schedule.refine_every);
      p.get("refine_max_shift_px", c.schedule.refine_max_shift_px);
    });
    r.section("analysis", [&](Reader& p) {
      auto& a = c.analysis;
      p.get("histogram_bins", a.histogram.bins);
      p.get("histogram_bin_width", a.histogram.bin_width);
      p.get("lower_quantile", a.histogram.lower_quantile);
      p.get("upper_quantile", a.histogram.upper_quantile);
      p.get("reference", a.reference);
      p.get("focus_z_min", a.focus_z_min);
      p.get("focus_z_max", a.focus_z_max);
      p.get("focus_steps", a.focus_steps);
      p.get("section_planes", a.section_planes);
    });
  }

  require(c.wavelength > 0.0, "geometry.wavelength", "must be positive");
  require(c.detector_distance > 0.0, "geometry.detector_distance", "must be positive");
  require(c.pupil_distance > 0.0, "geometry.pupil_distance", "must be positive");
  const auto& sc = c.simulation;
  require(sc.raw_n >= 2 && sc.raw_n % 2 == 0, "simulation.raw_n", "must be even and >= 2");
  require(sc.raw_pitch > 0.0, "simulation.raw_pitch", "must be positive");
  require(sc.photons > 0.0, "simulation.photons", "must be positive");
  require(sc.adu_per_photon > 0.0, "simulation.adu_per_photon", "must be positive");
  require(sc.out_of_field_fraction >= 0.0 && sc.out_of_field_fraction < 1.0, "simulation.out_of_field_fraction",
          "must be in [0, 1)");
  require(sc.probe.mode_count >= 1, "simulation.probe.mode_count", "must be >= 1");
  require(sc.probe.waist > 0.0, "simulation.probe.waist", "must be positive");
  require(c.pipeline.bin_factor >= 1 && sc.raw_n % c.pipeline.bin_factor == 0, "pipeline.bin_factor",
          "must be >= 1 and divide simulation.raw_n");
  require(c.pipeline.pad_nx % 2 == 0 && c.pipeline.pad_nx >= sc.raw_n / c.pipeline.bin_factor, "pipeline.pad",
          "must be even and at least raw_n / bin_factor");
  require(c.correction.coarse.cell_pixels > 0.0, "correction.cell_pixels", "must be positive");
  require(c.correction.max_shift_px > 0.0, "correction.max_shift_px", "must be positive");
  require(c.schedule.engine.rank >= 1, "engine.rank", "must be >= 1");
  require(c.analysis.histogram.bins >= 1, "analysis.histogram_bins", "must be >= 1");
  require(c.analysis.focus_steps >= 3, "analysis.focus_steps", "must be >= 3");
  require(c.analysis.focus_z_min < c.analysis.focus_z_max, "analysis.focus_z_min", "must be below focus_z_max");
  require(c.analysis.section_planes >= 2, "analysis.section_planes", "must be >= 2");

  c.correction.coarse.jitter_sigma = {sc.probe.jitter_sigma_major, sc.probe.jitter_sigma_minor};
  c.correction.coarse.jitter_axis_angle = sc.probe.jitter_axis_angle;
  c.sync();
  return c;
}

inline RunConfig load_config(const std::filesystem::path& p) {
  if (!std::filesystem::exists(p)) throw Error(ErrorKind::Config, "config file not found: " + p.string());
  std::string text;
  try {
    text = read_bytes(p);
  } catch (const Error& e) {
    throw Error(ErrorKind::Config, e.what());
  }
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Config, p.string() + ": " + e.what());
  }
  return parse_config(doc);
}

/// Fully resolved configuration as JSON (the output directory is left out, it does
/// not affect results). Its SHA-256 is the config hash recorded in manifests.
inline nlohmann::json resolved_config(const RunConfig& c) {
  using nlohmann::json;
  const auto& sc = c.simulation;
  json scans = json::array();
  for (const auto& s : sc.scans)
    scans.push_back(json{{"center", {s.center.x, s.center.y}}, {"extent", {s.extent.x, s.extent.y}}, {"step", s.step},
                         {"n_positions", s.n_positions}, {"repeats_per_position", s.repeats_per_position}});
  const auto& e = c.schedule.engine;
  const auto& k = c.correction;
  const auto& a = c.analysis;
  return json{
      {"seed", c.seed},
      {"geometry", {{"wavelength", c.wavelength}, {"detector_distance", c.detector_distance}, {"pupil_distance", c.pupil_distance}}},
      {"simulation",
       {{"raw_n", sc.raw_n}, {"raw_pitch", sc.raw_pitch}, {"photons", sc.photons}, {"noiseless", sc.noiseless},
        {"adu_per_photon", sc.adu_per_photon}, {"dark_level", sc.dark_level}, {"out_of_field_fraction", sc.out_of_field_fraction},
        {"star", {{"n_spokes", sc.star.n_spokes}, {"outer_radius", sc.star.outer_radius}, {"inner_radius", sc.star.inner_radius},
                  {"t_gold", sc.star.t_gold}, {"t_open", sc.star.t_open}}},
        {"probe", {{"waist", sc.probe.waist}, {"curvature_radius", sc.probe.curvature_radius}, {"mode_count", sc.probe.mode_count},
                   {"weight_sigma", sc.probe.weight_sigma}, {"intensity_rel_sigma", sc.probe.intensity_rel_sigma},
                   {"jitter_sigma_major", sc.probe.jitter_sigma_major}, {"jitter_sigma_minor", sc.probe.jitter_sigma_minor},
                   {"jitter_axis_angle", sc.probe.jitter_axis_angle}}},
        {"scans", scans}}},
      {"pipeline", {{"bin_factor", c.pipeline.bin_factor}, {"pad", c.pipeline.pad_nx}, {"threshold", c.pipeline.threshold},
                    {"subtract_dark", c.subtract_dark}}},
      {"correction", {{"enabled", k.enabled}, {"cell_pixels", k.coarse.cell_pixels}, {"span_sigmas", k.coarse.span_sigmas},
                      {"floor", k.coarse.floor}, {"refine_passes", k.refine_passes}, {"max_shift_px", k.max_shift_px},
                      {"field_dilation", k.field_dilation}, {"max_increases", k.max_increases}}},
      {"engine", {{"rank", e.rank}, {"dm_iterations", e.dm_iterations}, {"ml_iterations", e.ml_iterations},
                  {"inner_loops", e.inner_loops}, {"probe_start", e.probe_start}, {"variation_start", e.variation_start},
                  {"snapshot_every", e.snapshot_every}, {"object_margin", e.object_margin}, {"object_eps", e.object_eps},
                  {"probe_eps", e.probe_eps}, {"coefficient_eps", e.coefficient_eps},
                  {"refine_positions", c.schedule.refine_positions}, {"refine_every", c.schedule.refine_every},
                  {"refine_max_shift_px", c.schedule.refine_max_shift_px}}},
      {"analysis", {{"histogram_bins", a.histogram.bins}, {"histogram_bin_width", a.histogram.bin_width},
                    {"lower_quantile", a.histogram.lower_quantile}, {"upper_quantile", a.histogram.upper_quantile},
                    {"reference", {a.reference.x, a.reference.y}}, {"focus_z_min", a.focus_z_min},
                    {"focus_z_max", a.focus_z_max}, {"focus_steps", a.focus_steps}, {"section_planes", a.section_planes}}}};
}

inline std::string config_hash(const RunConfig& c) { return sha256(resolved_config(c).dump()); }

}  // namespace pulseprobe
