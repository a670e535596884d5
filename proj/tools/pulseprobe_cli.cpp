#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>

#include "pulseprobe/pulseprobe.hpp"

namespace fs = std::filesystem;
using namespace pulseprobe;

namespace {

struct Options {
  std::string config;
  std::string output;
  std::string input;
  std::string positions;
  int threads = 1;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config, "Run configuration (JSON); defaults apply when omitted");
  cmd->add_option("--output", o.output, "Output directory (overrides the config)");
  cmd->add_option("--threads", o.threads, "Worker threads")->check(CLI::PositiveNumber);
  cmd->add_option("--seed", o.seed, "Random seed (overrides the config)");
}

RunConfig resolve(const Options& o) {
  RunConfig cfg = o.config.empty() ? parse_config(nlohmann::json::object()) : load_config(o.config);
  if (!o.output.empty()) cfg.output = o.output;
  if (o.seed) {
    cfg.seed = *o.seed;
    cfg.sync();
  }
  return cfg;
}

fs::path input_or(const Options& o, const fs::path& fallback) { return o.input.empty() ? fallback : fs::path(o.input); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pulseprobe: ptychographic reconstruction of per-pulse probes"};
  app.require_subcommand(1);
  Options o;

  auto* sim = app.add_subcommand("simulate", "Simulate raw frames and ground truth into <output>/raw and <output>/truth");
  auto* pre = app.add_subcommand("preprocess", "Bin, pad and dark-correct frames into <output>/frames");
  auto* cor = app.add_subcommand("correct-positions", "Coarse and refined position correction into <output>/positions");
  auto* rec = app.add_subcommand("reconstruct", "DM then ML reconstruction into <output>/checkpoint");
  auto* ana = app.add_subcommand("analyze", "Mode weights, pulse statistics and focus into <output>/analysis");
  auto* pro = app.add_subcommand("propagate", "Pupil-plane and focal-series renders into <output>/propagation");
  for (auto* c : {sim, pre, cor, rec, ana, pro}) add_common(c, o);
  for (auto* c : {pre, cor, rec, ana, pro}) c->add_option("--input", o.input, "Stage input directory (default: previous stage under <output>)");
  rec->add_option("--positions", o.positions, "Corrected positions directory (default: <output>/positions when present)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    const RunConfig cfg = resolve(o);
    set_threads(o.threads);
    const fs::path out = cfg.output;
    if (sim->parsed()) {
      stage_simulate(cfg, out);
    } else if (pre->parsed()) {
      stage_preprocess(cfg, input_or(o, out / "raw"), out / "frames");
    } else if (cor->parsed()) {
      stage_correct(cfg, input_or(o, out / "frames"), out / "positions");
    } else if (rec->parsed()) {
      std::optional<fs::path> pos;
      if (!o.positions.empty()) {
        pos = o.positions;
        if (!fs::exists(*pos)) throw Error(ErrorKind::Io, "positions directory not found: " + o.positions);
      } else if (fs::exists(out / "positions" / "positions.csv")) {
        pos = out / "positions";
      }
      stage_reconstruct(cfg, input_or(o, out / "frames"), pos, out / "checkpoint");
    } else if (ana->parsed()) {
      const json summary = stage_analyze(cfg, input_or(o, out / "checkpoint"), out / "analysis");
      std::printf("relative_std %.4f median_displacement_um %.3f\n", summary["relative_std"].get<double>(),
                  summary["median_displacement"].get<double>() * 1e6);
    } else if (pro->parsed()) {
      stage_propagate(cfg, input_or(o, out / "checkpoint"), out / "propagation");
    }
  } catch (const StageError& e) {
    std::fprintf(stderr, "error: %s (stage %s)\n", e.what(), e.stage().c_str());
    return exit_code(e.kind());
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  }
  return 0;
}
