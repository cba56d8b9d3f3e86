// SPDX-License-Identifier: Apache-2.0
//
// Training: a sampler that draws (template, search, box) triples from a pool
// of synthetic sequences, the loss of each head variant, and the optimizer
// step.

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "fusetrack/crop.hpp"
#include "fusetrack/losses.hpp"
#include "fusetrack/model.hpp"
#include "fusetrack/synthetic.hpp"

namespace fusetrack {

struct Curriculum {
  ScenarioSpec scene;             // frame size, target size and motion; seed is the pool seed
  std::size_t sequences = 64;     // pool size
  double degrade_probability = 0.5;  // per sample, one search modality
  std::vector<Degradation> kinds{Degradation::noise, Degradation::blank, Degradation::dim};
  std::size_t max_gap = 20;       // frames between template and search
  double center_jitter = 0.1;     // fraction of the search crop side
  double scale_jitter = 0.1;      // relative crop side jitter
  // Degrades this modality in every template and search (training-dynamics checks).
  std::optional<std::pair<Modality, Degradation>> permanent;
};

struct TrainingSample {
  ImagePair template_crop;
  ImagePair search_crop;
  BoundingBox target;  // normalized search-crop coordinates
  std::array<Degradation, 2> search_state{Degradation::clean, Degradation::clean};
};

class SampleSource {
 public:
  SampleSource(Curriculum curriculum, CropConfig crop, std::uint64_t seed);
  TrainingSample next();
  std::vector<TrainingSample> batch(std::size_t n);
  const std::vector<SyntheticScenario>& pool() const { return pool_; }

 private:
  Curriculum curriculum_;
  CropConfig crop_;
  std::vector<SyntheticScenario> pool_;
  Rng rng_;
};

struct TrainConfig {
  AdamWConfig optimizer;
  std::size_t batch = 8;
  std::size_t steps = 2000;
  std::size_t warmup_steps = 0;  // linear learning-rate ramp
  LossWeights weights;
  std::uint64_t seed = 1;
};

struct LossTensors {
  Tensor total;
  LossBreakdown parts;
};

// Variant-specific objective. Dual models weight the two head losses by the
// softmax of their reliability scores; single-head models use their one head.
LossTensors compute_loss(const TrackerModel& model, const ModelOutput& out, const std::vector<BoundingBox>& targets,
                         const LossWeights& weights);

struct TrainCurveRow {
  std::size_t step;
  double l_rgb, l_t, lambda_rgb, lambda_t, total;
};

class Trainer {
 public:
  Trainer(TrackerModel& model, const TrainConfig& config);

  // One optimizer step on the batch. Throws NumericError naming the step when
  // the loss is not finite.
  LossBreakdown step(std::span<const TrainingSample> batch);

  // Runs `config.steps - steps_done()` steps from `source`.
  std::vector<TrainCurveRow> run(SampleSource& source, const std::function<void(const TrainCurveRow&)>& on_step = {});

  std::size_t steps_done() const { return static_cast<std::size_t>(optimizer_.step_count()); }
  AdamW& optimizer() { return optimizer_; }
  ParameterSet& parameters() { return params_; }

 private:
  TrackerModel& model_;
  TrainConfig config_;
  ParameterSet params_;
  AdamW optimizer_;
};

}  // namespace fusetrack
