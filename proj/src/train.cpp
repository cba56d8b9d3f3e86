// SPDX-License-Identifier: Apache-2.0

#include "fusetrack/train.hpp"

#include <algorithm>
#include <cmath>

namespace fusetrack {

SampleSource::SampleSource(Curriculum curriculum, CropConfig crop, std::uint64_t seed)
    : curriculum_(std::move(curriculum)), crop_(crop), rng_(mix_seed(seed, 0x5a3b1e)) {
  crop_.validate();
  if (curriculum_.sequences == 0) throw ContractError("curriculum: the sequence pool is empty");
  for (std::size_t i = 0; i < curriculum_.sequences; ++i) {
    ScenarioSpec spec = curriculum_.scene;
    spec.seed = mix_seed(curriculum_.scene.seed, i, 0x7001);
    spec.spans.clear();
    pool_.push_back(make_scenario(spec));
  }
}

TrainingSample SampleSource::next() {
  const auto& s = pool_[rng_.uniform_index(pool_.size())];
  const auto n = s.boxes.size();
  const auto t0 = rng_.uniform_index(n);
  const auto lo = t0 > curriculum_.max_gap ? t0 - curriculum_.max_gap : 0;
  const auto hi = std::min(n - 1, t0 + curriculum_.max_gap);
  const auto t1 = lo + rng_.uniform_index(hi - lo + 1);

  TrainingSample out;
  ImagePair zf = render_clean_frame(s, t0);
  ImagePair xf = render_clean_frame(s, t1);
  if (curriculum_.permanent) {
    const auto [m, kind] = *curriculum_.permanent;
    apply_degradation(zf, m, kind, rng_.next_u64());
    apply_degradation(xf, m, kind, rng_.next_u64());
    out.search_state[static_cast<int>(m)] = kind;
  } else if (rng_.uniform() < curriculum_.degrade_probability && !curriculum_.kinds.empty()) {
    const auto m = rng_.uniform() < 0.5 ? Modality::rgb : Modality::thermal;
    const auto kind = curriculum_.kinds[rng_.uniform_index(curriculum_.kinds.size())];
    apply_degradation(xf, m, kind, rng_.next_u64());
    out.search_state[static_cast<int>(m)] = kind;
  }

  out.template_crop = crop_template(zf, s.boxes[t0], crop_).images;
  const BoundingBox& gt = s.boxes[t1];
  const double side = crop_.search_factor * std::sqrt(gt.w * gt.h) *
                      (1.0 + rng_.uniform(-curriculum_.scale_jitter, curriculum_.scale_jitter));
  const double cx = gt.cx + rng_.uniform(-curriculum_.center_jitter, curriculum_.center_jitter) * side;
  const double cy = gt.cy + rng_.uniform(-curriculum_.center_jitter, curriculum_.center_jitter) * side;
  const Crop crop = crop_square(xf, cx, cy, side, crop_.search_size);
  out.search_crop = crop.images;
  out.target = crop.transform.to_crop(gt);
  return out;
}

std::vector<TrainingSample> SampleSource::batch(std::size_t n) {
  std::vector<TrainingSample> b;
  b.reserve(n);
  for (std::size_t i = 0; i < n; ++i) b.push_back(next());
  return b;
}

LossTensors compute_loss(const TrackerModel& model, const ModelOutput& out, const std::vector<BoundingBox>& targets,
                         const LossWeights& weights) {
  LossTensors r;
  if (model.dual()) {
    auto lr = head_loss_op(out.maps[0], targets, weights);
    auto lt = head_loss_op(out.maps[1], targets, weights);
    auto tot = total_loss_op(lr.per_sample, lt.per_sample, out.r_rgb, out.r_t);
    r.total = tot.total;
    r.parts.rgb = lr.mean_parts;
    r.parts.thermal = lt.mean_parts;
    r.parts.lambda_rgb = tot.lambda_rgb;
    r.parts.lambda_t = tot.lambda_t;
  } else {
    auto l = head_loss_op(out.maps[0], targets, weights);
    r.total = mean(l.per_sample);
    const bool thermal = model.config().variant == HeadVariant::thermal_only;
    (thermal ? r.parts.thermal : r.parts.rgb) = l.mean_parts;
    r.parts.lambda_rgb = thermal ? 0.0 : 1.0;
    r.parts.lambda_t = thermal ? 1.0 : 0.0;
  }
  r.parts.total = r.total.item();
  return r;
}

Trainer::Trainer(TrackerModel& model, const TrainConfig& config)
    : model_(model), config_(config), params_(model.parameters()), optimizer_(config.optimizer, params_) {
  if (config_.batch == 0) throw ContractError("training batch must be positive");
}

LossBreakdown Trainer::step(std::span<const TrainingSample> batch) {
  std::vector<ImagePair> zs, xs;
  std::vector<BoundingBox> targets;
  for (const auto& s : batch) {
    zs.push_back(s.template_crop);
    xs.push_back(s.search_crop);
    targets.push_back(s.target);
  }
  const auto step_no = steps_done() + 1;
  if (config_.warmup_steps > 0) {
    optimizer_.set_lr_scale(std::min(1.0, static_cast<double>(step_no) / static_cast<double>(config_.warmup_steps)));
  }
  params_.zero_grad();
  LossBreakdown parts;
  try {
    Tape tape;
    RecordingScope scope(tape);
    auto out = model_.forward(zs, xs, true);
    auto loss = compute_loss(model_, out, targets, config_.weights);
    parts = loss.parts;
    tape.backward(loss.total);
  } catch (const NumericError& e) {
    throw NumericError("training aborted at step " + std::to_string(step_no) + ": " + e.what());
  }
  optimizer_.step(params_);
  return parts;
}

std::vector<TrainCurveRow> Trainer::run(SampleSource& source, const std::function<void(const TrainCurveRow&)>& on_step) {
  std::vector<TrainCurveRow> curve;
  while (steps_done() < config_.steps) {
    const auto batch = source.batch(config_.batch);
    const auto p = step(batch);
    TrainCurveRow row{steps_done(), p.rgb.total, p.thermal.total, p.lambda_rgb, p.lambda_t, p.total};
    curve.push_back(row);
    if (on_step) on_step(row);
  }
  return curve;
}

}  // namespace fusetrack
