// SPDX-License-Identifier: Apache-2.0
//
// Procedural RGB-T sequences: a textured target moving by a bounded random
// walk, rendered differently per modality (colored stripes in RGB, a warm
// blob in thermal), with a per-frame degradation schedule per modality.
// Frames are rendered on demand from (seed, frame index), so long sequences
// cost no memory until a frame is requested.

#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "fusetrack/box.hpp"
#include "fusetrack/embedding.hpp"
#include "fusetrack/heads.hpp"
#include "fusetrack/metrics.hpp"

namespace fusetrack {

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Degradation { clean = 0, noise, blank, dim };
const char* degradation_name(Degradation d);
Degradation parse_degradation(const std::string& name);

struct DegradationSpan {
  Modality modality = Modality::rgb;
  Degradation kind = Degradation::noise;
  std::size_t begin = 0;  // first frame
  std::size_t end = 0;    // one past the last frame
};

struct ScenarioSpec {
  std::uint64_t seed = 1;
  std::size_t num_frames = 100;
  std::size_t height = 128;
  std::size_t width = 128;
  double target_min = 12.0;  // target side range in pixels
  double target_max = 20.0;
  double max_speed = 2.5;    // pixels per frame
  double acceleration = 0.5;  // random-walk step on the velocity
  bool distractor = true;
  std::vector<DegradationSpan> spans;
};

struct Appearance {
  std::array<double, 3> rgb_background;
  std::array<double, 3> rgb_target;
  std::array<double, 3> rgb_distractor;
  double stripe_period;
  double stripe_phase;
  double thermal_background;
  double thermal_target;
  double thermal_distractor;
};

struct SyntheticScenario {
  ScenarioSpec spec;
  Appearance appearance;
  std::vector<BoundingBox> boxes;       // target per frame, pixels
  std::vector<BoundingBox> distractor;  // distractor per frame, pixels
  std::vector<std::array<Degradation, 2>> schedule;  // per frame, [rgb, thermal]
};

// Trajectory, appearance and schedule. Throws GenerationError when the frame
// cannot hold the target with a one-target-width margin or a span is invalid.
SyntheticScenario make_scenario(const ScenarioSpec& spec);

// Renders frame `t` with its scheduled degradations applied.
ImagePair render_frame(const SyntheticScenario& s, std::size_t t);
// Renders frame `t` without degradations.
ImagePair render_clean_frame(const SyntheticScenario& s, std::size_t t);

// Replaces one modality image per the degradation kind; `noise_seed` drives
// the uniform noise.
void apply_degradation(ImagePair& frame, Modality m, Degradation kind, std::uint64_t noise_seed);

struct Sequence {
  std::vector<ImagePair> frames;
  std::vector<FrameAnnotation> annotations;
};

Sequence generate_sequence(const SyntheticScenario& s);

// Both modalities share the target box (aligned imagery).
std::vector<FrameAnnotation> scenario_annotations(const SyntheticScenario& s);

// Deterministic 64-bit mixing of several integers into a seed.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0);

}  // namespace fusetrack
