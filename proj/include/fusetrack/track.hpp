// SPDX-License-Identifier: Apache-2.0
//
// Sequence tracking and evaluation over synthetic sequence sets.

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "fusetrack/crop.hpp"
#include "fusetrack/metrics.hpp"
#include "fusetrack/model.hpp"
#include "fusetrack/synthetic.hpp"

namespace fusetrack {

struct TrackOptions {
  CropConfig crop;
  bool hanning = true;
};

using FrameSource = std::function<ImagePair(std::size_t)>;

// The template is cropped once from frame 0 at `init`. Each frame's search
// crop is centered on the previous output box. Returned boxes are in frame
// pixels.
std::vector<TrackOutput> track_sequence(TrackerModel& model, const FrameSource& frames, std::size_t count,
                                        const BoundingBox& init, const TrackOptions& options);

struct HeldOutSpec {
  std::size_t sequences = 20;
  std::uint64_t seed = 9001;
  ScenarioSpec scene;          // frame size, motion, target size; seed unused
  std::size_t span_min = 20;   // contiguous degraded span length range
  std::size_t span_max = 40;
  std::size_t span_start_min = 10;
  Degradation kind = Degradation::noise;
};

// Each sequence gets one contiguous span of `kind` in one modality, with the
// modality alternating between sequences.
std::vector<SyntheticScenario> make_held_out_set(const HeldOutSpec& spec);

struct SequenceEval {
  EvalReport report;
  std::vector<TrackOutput> outputs;
  std::size_t degraded_frames = 0;  // frames with exactly one degraded modality
  std::size_t clean_choices = 0;    // of those, frames where the clean modality was chosen
};

SequenceEval evaluate_sequence(TrackerModel& model, const SyntheticScenario& scenario, const TrackOptions& options);

struct SetEval {
  EvalReport report;  // aggregated over sequences
  std::size_t degraded_frames = 0;
  std::size_t clean_choices = 0;
  double selection_rate() const {
    return degraded_frames == 0 ? 0.0 : static_cast<double>(clean_choices) / static_cast<double>(degraded_frames);
  }
};

SetEval evaluate_set(TrackerModel& model, const std::vector<SyntheticScenario>& set, const TrackOptions& options);

}  // namespace fusetrack
