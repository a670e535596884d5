#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "pulseprobe/error.hpp"
#include "pulseprobe/grid.hpp"
#include "pulseprobe/wavefield.hpp"

namespace pulseprobe {

enum class FrameStatus { Accepted, RejectedOutOfField, RejectedRefinementFailed };

inline std::string to_string(FrameStatus s) {
  switch (s) {
    case FrameStatus::Accepted: return "accepted";
    case FrameStatus::RejectedOutOfField: return "rejected_out_of_field";
    case FrameStatus::RejectedRefinementFailed: return "rejected_refinement_failed";
  }
  return "unknown";
}

inline FrameStatus frame_status_from_string(const std::string& s) {
  if (s == "accepted") return FrameStatus::Accepted;
  if (s == "rejected_out_of_field") return FrameStatus::RejectedOutOfField;
  if (s == "rejected_refinement_failed") return FrameStatus::RejectedRefinementFailed;
  throw Error(ErrorKind::Input, "unknown frame status '" + s + "'");
}

/// Per-frame position record. `refined` is only meaningful for accepted frames;
/// `coarse` is kept for rejected frames when a correlation match was found.
struct PositionEstimate {
  std::size_t frame_index = 0;
  Vec2 nominal;
  std::optional<Vec2> coarse;
  std::optional<Vec2> refined;
  FrameStatus status = FrameStatus::Accepted;

  /// Most refined position available.
  Vec2 best() const {
    if (refined) return *refined;
    if (coarse) return *coarse;
    return nominal;
  }
};

/// Frames sharing one detector grid. `mask` marks measured pixels (1) and pixels
/// with no data such as padding (0); an empty mask means everything is measured.
struct FrameSet {
  std::vector<IntensityFrame> frames;
  MaskGrid mask;

  std::size_t size() const noexcept { return frames.size(); }
  bool empty() const noexcept { return frames.empty(); }
  std::size_t ny() const { return frames.empty() ? 0 : frames.front().ny(); }
  std::size_t nx() const { return frames.empty() ? 0 : frames.front().nx(); }
  bool measured(std::size_t i) const { return mask.empty() || mask[i] != 0; }
};

inline void validate(const FrameSet& fs) {
  if (fs.empty()) throw Error(ErrorKind::Input, "frame set is empty");
  for (const auto& f : fs.frames)
    if (f.ny() != fs.ny() || f.nx() != fs.nx()) throw Error(ErrorKind::Shape, "frames have different dimensions");
  if (!fs.mask.empty() && (fs.mask.ny() != fs.ny() || fs.mask.nx() != fs.nx()))
    throw Error(ErrorKind::Shape, "mask dimensions differ from frames");
}

/// Subset of `fs` and `estimates` with accepted status, in the original order.
inline std::pair<FrameSet, std::vector<PositionEstimate>> accepted_subset(const FrameSet& fs,
                                                                          const std::vector<PositionEstimate>& estimates) {
  if (fs.size() != estimates.size()) throw Error(ErrorKind::Input, "frame and position counts differ");
  FrameSet out;
  out.mask = fs.mask;
  std::vector<PositionEstimate> pos;
  for (std::size_t j = 0; j < fs.size(); ++j) {
    if (estimates[j].status != FrameStatus::Accepted) continue;
    out.frames.push_back(fs.frames[j]);
    pos.push_back(estimates[j]);
  }
  return {std::move(out), std::move(pos)};
}

inline std::vector<PositionEstimate> nominal_estimates(const FrameSet& fs) {
  std::vector<PositionEstimate> out;
  out.reserve(fs.size());
  for (const auto& f : fs.frames) out.push_back(PositionEstimate{f.frame_index, f.nominal_position, {}, {}, FrameStatus::Accepted});
  return out;
}

}  // namespace pulseprobe
