#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <vector>

#include "pulseprobe/engine.hpp"
#include "pulseprobe/log.hpp"
#include "pulseprobe/positions.hpp"

namespace pulseprobe {

struct ScheduleConfig {
  EngineConfig engine;               // dm_iterations / ml_iterations default to 200 / 800
  bool refine_positions = false;     // positions stay frozen during ML unless enabled
  std::size_t refine_every = 10;     // ML iterations between position updates
  double refine_max_shift_px = 0.5;
  RefineConfig refine;
};

struct Snapshot {
  std::size_t iteration = 0;
  double error = 0.0;
  WaveField object;
  EigenBasis basis;
};

struct ScheduleResult {
  ReconState state;
  std::vector<Snapshot> snapshots;
};

using ScheduleObserver = std::function<void(const ReconState&)>;

/// DM then ML on an initialised state. The error history gains one entry per
/// iteration; a snapshot is kept whenever the iteration count reaches a multiple of
/// `engine.snapshot_every`. A position update during ML that would raise the
/// likelihood is discarded, so the recorded ML values never increase.
inline ScheduleResult run_schedule(ReconState state, const FrameSet& frames, const ScheduleConfig& cfg,
                                   const ScheduleObserver& observer = {}) {
  const EngineConfig& ec = cfg.engine;
  ScheduleResult out;
  auto snap = [&] {
    if (ec.snapshot_every == 0 || state.iteration == 0 || state.iteration % ec.snapshot_every != 0) return;
    out.snapshots.push_back(Snapshot{state.iteration, state.errors.back(), state.object, state.basis});
  };

  for (std::size_t i = 0; i < ec.dm_iterations; ++i) {
    dm_iterate(state, frames, ec);
    snap();
    if (observer) observer(state);
  }
  log().info("DM done: {} iterations, error {:.6g}", state.dm_iterations, state.errors.empty() ? 0.0 : state.errors.back());

  RefineTracker tracker;
  std::size_t done = 0;
  while (done < ec.ml_iterations) {
    std::size_t chunk = ec.ml_iterations - done;
    if (ec.snapshot_every > 0) chunk = std::min(chunk, ec.snapshot_every - state.iteration % ec.snapshot_every);
    if (cfg.refine_positions && cfg.refine_every > 0) chunk = std::min(chunk, cfg.refine_every - done % cfg.refine_every);
    const std::size_t before = state.iteration;
    ml_refine(state, frames, chunk, ec);
    done += chunk;
    snap();
    if (observer) observer(state);
    if (state.ml_converged) {
      log().info("ML converged after {} iterations", state.iteration - state.dm_iterations);
      break;
    }
    if (state.iteration == before) break;

    if (cfg.refine_positions && cfg.refine_every > 0 && done % cfg.refine_every == 0 && done < ec.ml_iterations) {
      const std::vector<PositionEstimate> previous = state.positions;
      state.positions = refine_positions(state, frames, cfg.refine_max_shift_px, &tracker, cfg.refine);
      if (ml_objective(state, frames) > state.errors.back()) {
        log().debug("position update at iteration {} discarded", state.iteration);
        state.positions = previous;
      }
    }
  }
  out.state = std::move(state);
  return out;
}

inline ScheduleResult run_schedule(const FrameSet& frames, const std::vector<PositionEstimate>& positions, const Geometry& g,
                                   const ScheduleConfig& cfg, const ScheduleObserver& observer = {}) {
  return run_schedule(init_state(frames, positions, g, cfg.engine), frames, cfg, observer);
}

}  // namespace pulseprobe
