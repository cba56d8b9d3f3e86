// SPDX-License-Identifier: Apache-2.0

#include "fusetrack/track.hpp"

#include <algorithm>
#include <cmath>

namespace fusetrack {

namespace {

constexpr double kMinSidePx = 4.0;

BoundingBox keep_in_frame(BoundingBox b, double width, double height) {
  b.w = std::clamp(b.w, kMinSidePx, width);
  b.h = std::clamp(b.h, kMinSidePx, height);
  b.cx = std::clamp(b.cx, 0.0, width);
  b.cy = std::clamp(b.cy, 0.0, height);
  return b;
}

}  // namespace

std::vector<TrackOutput> track_sequence(TrackerModel& model, const FrameSource& frames, std::size_t count,
                                        const BoundingBox& init, const TrackOptions& options) {
  std::vector<TrackOutput> out;
  if (count == 0) return out;
  options.crop.validate();
  const auto window = hanning_window(grid_side(model.config().embedding.search_tokens()));
  const auto* win = options.hanning ? &window : nullptr;

  ImagePair first = frames(0);
  const double width = static_cast<double>(first.width()), height = static_cast<double>(first.height());
  const ImagePair templ = crop_template(first, init, options.crop).images;
  BoundingBox prev = init;
  for (std::size_t t = 0; t < count; ++t) {
    ImagePair frame = t == 0 ? first : frames(t);
    const Crop search = crop_search(frame, prev, options.crop);
    TrackOutput o = model.infer(templ, search.images, win);
    o.box = search.transform.to_frame(o.box);
    o.both_boxes[0] = search.transform.to_frame(o.both_boxes[0]);
    o.both_boxes[1] = search.transform.to_frame(o.both_boxes[1]);
    prev = keep_in_frame(o.box, width, height);
    out.push_back(o);
  }
  return out;
}

std::vector<SyntheticScenario> make_held_out_set(const HeldOutSpec& spec) {
  if (spec.span_min == 0 || spec.span_max < spec.span_min) throw ContractError("held-out set: invalid span range");
  std::vector<SyntheticScenario> set;
  Rng rng(mix_seed(spec.seed, 0x4e1d));
  for (std::size_t i = 0; i < spec.sequences; ++i) {
    ScenarioSpec s = spec.scene;
    s.seed = mix_seed(spec.seed, i, 0xe7a1);
    const auto len = spec.span_min + rng.uniform_index(spec.span_max - spec.span_min + 1);
    if (s.num_frames < spec.span_start_min + len) throw ContractError("held-out set: sequence too short for its span");
    const auto begin = spec.span_start_min + rng.uniform_index(s.num_frames - len - spec.span_start_min + 1);
    s.spans = {{i % 2 == 0 ? Modality::rgb : Modality::thermal, spec.kind, begin, begin + len}};
    set.push_back(make_scenario(s));
  }
  return set;
}

SequenceEval evaluate_sequence(TrackerModel& model, const SyntheticScenario& scenario, const TrackOptions& options) {
  SequenceEval r;
  const auto n = scenario.boxes.size();
  r.outputs = track_sequence(
      model, [&](std::size_t t) { return render_frame(scenario, t); }, n, scenario.boxes.front(), options);
  std::vector<BoundingBox> pred;
  for (const auto& o : r.outputs) pred.push_back(o.box);
  r.report = evaluate(pred, scenario_annotations(scenario));
  for (std::size_t t = 0; t < n; ++t) {
    const auto& st = scenario.schedule[t];
    const bool rgb_bad = st[0] != Degradation::clean, t_bad = st[1] != Degradation::clean;
    if (rgb_bad == t_bad) continue;
    ++r.degraded_frames;
    const auto clean = rgb_bad ? Modality::thermal : Modality::rgb;
    if (r.outputs[t].chosen == clean) ++r.clean_choices;
  }
  return r;
}

SetEval evaluate_set(TrackerModel& model, const std::vector<SyntheticScenario>& set, const TrackOptions& options) {
  SetEval r;
  std::vector<EvalReport> reports;
  for (const auto& s : set) {
    auto e = evaluate_sequence(model, s, options);
    reports.push_back(e.report);
    r.degraded_frames += e.degraded_frames;
    r.clean_choices += e.clean_choices;
  }
  if (!reports.empty()) r.report = aggregate(reports);
  return r;
}

}  // namespace fusetrack
