#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <utility>

#include "pulseprobe/error.hpp"
#include "pulseprobe/frameset.hpp"
#include "pulseprobe/parallel.hpp"
#include "pulseprobe/wavefield.hpp"

namespace pulseprobe {

struct PipelineConfig {
  std::optional<IntensityFrame> dark_frame;
  std::size_t bin_factor = 2;
  std::size_t pad_ny = 512;
  std::size_t pad_nx = 512;
  double adu_per_photon = 1.0;
  double threshold = 0.0;
};

inline void validate(const PipelineConfig& cfg) {
  if (cfg.bin_factor < 1) throw Error(ErrorKind::Config, "bin_factor must be >= 1");
  if (!(cfg.adu_per_photon > 0.0)) throw Error(ErrorKind::Config, "adu_per_photon must be positive");
  if (!std::isfinite(cfg.threshold)) throw Error(ErrorKind::Config, "threshold must be finite");
}

/// bin -> pad -> subtract dark (binned and padded the same way) -> zero values below
/// the threshold (and negatives) -> divide by the gain.
inline IntensityFrame preprocess(const IntensityFrame& raw, const PipelineConfig& cfg) {
  validate(cfg);
  IntensityFrame out = pad_center(bin_frame(raw, cfg.bin_factor), cfg.pad_ny, cfg.pad_nx);
  if (cfg.dark_frame) {
    if (cfg.dark_frame->ny() != raw.ny() || cfg.dark_frame->nx() != raw.nx())
      throw Error(ErrorKind::Config, "dark frame shape does not match the raw frame");
    const IntensityFrame dark = pad_center(bin_frame(*cfg.dark_frame, cfg.bin_factor), cfg.pad_ny, cfg.pad_nx);
    for (std::size_t i = 0; i < out.counts.size(); ++i) out.counts[i] -= dark.counts[i];
  }
  const double inv_gain = 1.0 / cfg.adu_per_photon;
  for (auto& v : out.counts) {
    if (v < cfg.threshold || v < 0.0) v = 0.0;
    v *= inv_gain;
  }
  return out;
}

/// Measured-pixel mask of a preprocessed frame: the binned raw area inside the padding.
inline MaskGrid padding_mask(std::size_t raw_ny, std::size_t raw_nx, const PipelineConfig& cfg) {
  MaskGrid inner(raw_ny / cfg.bin_factor, raw_nx / cfg.bin_factor, 1);
  return pad_grid<unsigned char>(inner, cfg.pad_ny, cfg.pad_nx, 0);
}

inline FrameSet preprocess(const FrameSet& raw, const PipelineConfig& cfg) {
  validate(raw);
  validate(cfg);
  FrameSet out;
  out.frames.resize(raw.size());
  parallel_for(raw.size(), [&](std::size_t j) { out.frames[j] = preprocess(raw.frames[j], cfg); });
  out.mask = padding_mask(raw.ny(), raw.nx(), cfg);
  return out;
}

/// False when the frame holds fewer than `min_photons` or any non-finite value.
inline bool validate_frame(const IntensityFrame& frame, double min_photons) {
  double total = 0.0;
  for (double v : frame.counts) {
    if (!std::isfinite(v)) return false;
    total += v;
  }
  return total >= min_photons;
}

}  // namespace pulseprobe
