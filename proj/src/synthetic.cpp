// SPDX-License-Identifier: Apache-2.0

#include "fusetrack/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace fusetrack {

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double color_distance(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  return std::sqrt((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]) + (a[2] - b[2]) * (a[2] - b[2]));
}

std::array<double, 3> random_color(Rng& rng) { return {rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)}; }

// Bounded random walk of a box center that reflects off [lo, hi] per axis.
struct Walker {
  double x, y, vx = 0.0, vy = 0.0;

  void step(Rng& rng, double accel, double max_speed, double lo_x, double hi_x, double lo_y, double hi_y) {
    vx = std::clamp(vx + rng.uniform(-accel, accel), -max_speed, max_speed);
    vy = std::clamp(vy + rng.uniform(-accel, accel), -max_speed, max_speed);
    x += vx;
    y += vy;
    if (x < lo_x) x = lo_x + (lo_x - x), vx = -vx;
    if (x > hi_x) x = hi_x - (x - hi_x), vx = -vx;
    if (y < lo_y) y = lo_y + (lo_y - y), vy = -vy;
    if (y > hi_y) y = hi_y - (y - hi_y), vy = -vy;
    x = std::clamp(x, lo_x, hi_x);
    y = std::clamp(y, lo_y, hi_y);
  }
};

// Scale breathing keeps the size head honest without leaving the margin.
constexpr double kScaleAmplitude = 0.1;

struct Trajectory {
  std::vector<BoundingBox> boxes;
};

Trajectory walk(const ScenarioSpec& spec, Rng& rng, double w0, double h0, const BoundingBox* avoid) {
  const double big = (1.0 + kScaleAmplitude) * std::max(w0, h0);
  // Box edge at least one target width from the frame edge.
  const double lo_x = 1.5 * big, hi_x = static_cast<double>(spec.width) - 1.5 * big;
  const double lo_y = 1.5 * big, hi_y = static_cast<double>(spec.height) - 1.5 * big;
  if (!(lo_x < hi_x) || !(lo_y < hi_y)) {
    throw GenerationError("scenario: a " + std::to_string(spec.width) + "x" + std::to_string(spec.height) +
                          " frame cannot hold a target of side " + std::to_string(big) + " with its margin");
  }
  Walker wk{rng.uniform(lo_x, hi_x), rng.uniform(lo_y, hi_y)};
  if (avoid) {
    // Start the distractor away from the target where the frame allows it.
    for (int tries = 0; tries < 20 && std::hypot(wk.x - avoid->cx, wk.y - avoid->cy) < 3 * big; ++tries) {
      wk.x = rng.uniform(lo_x, hi_x);
      wk.y = rng.uniform(lo_y, hi_y);
    }
  }
  const double period = rng.uniform(40.0, 80.0), phase = rng.uniform(0.0, 2 * std::numbers::pi);
  Trajectory t;
  for (std::size_t f = 0; f < spec.num_frames; ++f) {
    if (f > 0) wk.step(rng, spec.acceleration, spec.max_speed, lo_x, hi_x, lo_y, hi_y);
    const double s = 1.0 + kScaleAmplitude * std::sin(2 * std::numbers::pi * static_cast<double>(f) / period + phase);
    BoundingBox b{wk.x, wk.y, w0 * s, h0 * s};
    if (b.x0() < b.w || b.y0() < b.h || b.x1() > static_cast<double>(spec.width) - b.w ||
        b.y1() > static_cast<double>(spec.height) - b.h) {
      throw GenerationError("scenario: target left the frame margin at frame " + std::to_string(f));
    }
    t.boxes.push_back(b);
  }
  return t;
}

// Smooth ellipse membership: 1 inside, falling to 0 across a thin rim.
double ellipse_alpha(double x, double y, const BoundingBox& b) {
  const double dx = (x - b.cx) / (b.w / 2), dy = (y - b.cy) / (b.h / 2);
  return std::clamp((1.0 - (dx * dx + dy * dy)) * 4.0, 0.0, 1.0);
}

double blob(double x, double y, const BoundingBox& b) {
  const double dx = (x - b.cx) / (b.w / 2), dy = (y - b.cy) / (b.h / 2);
  const double r2 = dx * dx + dy * dy;
  return r2 > 18.0 ? 0.0 : std::exp(-2.0 * r2);  // below 3e-16 past the cutoff
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  return splitmix(splitmix(splitmix(a) ^ (b + 0x632be59bd9b4e019ULL)) ^ (c + 0x8cb92ba72f3d8dd7ULL));
}

const char* degradation_name(Degradation d) {
  switch (d) {
    case Degradation::clean: return "clean";
    case Degradation::noise: return "noise";
    case Degradation::blank: return "blank";
    case Degradation::dim: return "dim";
  }
  return "clean";
}

Degradation parse_degradation(const std::string& name) {
  for (auto d : {Degradation::clean, Degradation::noise, Degradation::blank, Degradation::dim}) {
    if (name == degradation_name(d)) return d;
  }
  throw GenerationError("unknown degradation '" + name + "'");
}

SyntheticScenario make_scenario(const ScenarioSpec& spec) {
  if (spec.num_frames == 0) throw GenerationError("scenario: num_frames must be positive");
  if (!(spec.target_min > 0.0) || spec.target_max < spec.target_min) {
    throw GenerationError("scenario: target size range is invalid");
  }
  SyntheticScenario s;
  s.spec = spec;
  Rng rng(mix_seed(spec.seed, 0x5ce7a710));

  auto& a = s.appearance;
  a.rgb_background = random_color(rng);
  do a.rgb_target = random_color(rng);
  while (color_distance(a.rgb_target, a.rgb_background) < 0.5);
  do a.rgb_distractor = random_color(rng);
  while (color_distance(a.rgb_distractor, a.rgb_background) < 0.35 ||
         color_distance(a.rgb_distractor, a.rgb_target) < 0.35);
  a.stripe_period = rng.uniform(3.0, 6.0);
  a.stripe_phase = rng.uniform(0.0, 2 * std::numbers::pi);
  a.thermal_background = rng.uniform(0.05, 0.25);
  a.thermal_target = rng.uniform(0.75, 0.95);
  a.thermal_distractor = rng.uniform(0.4, 0.55);

  const double w0 = rng.uniform(spec.target_min, spec.target_max);
  const double h0 = std::clamp(w0 * rng.uniform(0.75, 1.33), spec.target_min, spec.target_max);
  s.boxes = walk(spec, rng, w0, h0, nullptr).boxes;
  if (spec.distractor) {
    const double dw = rng.uniform(spec.target_min, spec.target_max);
    s.distractor = walk(spec, rng, dw, dw, &s.boxes.front()).boxes;
  }

  s.schedule.assign(spec.num_frames, {Degradation::clean, Degradation::clean});
  for (const auto& span : spec.spans) {
    if (span.begin >= span.end || span.end > spec.num_frames) {
      throw GenerationError("scenario: degradation span [" + std::to_string(span.begin) + ", " +
                            std::to_string(span.end) + ") does not fit " + std::to_string(spec.num_frames) +
                            " frames");
    }
    for (std::size_t f = span.begin; f < span.end; ++f) s.schedule[f][static_cast<int>(span.modality)] = span.kind;
  }
  return s;
}

// Sensor noise half-widths; uniform noise with standard deviations 0.02 and 0.015.
constexpr double kRgbNoise = 0.02 * 1.7320508075688772;
constexpr double kThermalNoise = 0.015 * 1.7320508075688772;

ImagePair render_clean_frame(const SyntheticScenario& s, std::size_t t) {
  if (t >= s.boxes.size()) throw RangeError("render_frame: frame " + std::to_string(t) + " out of range");
  const auto h = s.spec.height, w = s.spec.width;
  const auto& a = s.appearance;
  const BoundingBox& target = s.boxes[t];
  const BoundingBox* distractor = s.distractor.empty() ? nullptr : &s.distractor[t];
  Rng noise(mix_seed(s.spec.seed, t, 1));
  Rng layout(mix_seed(s.spec.seed, 0xbac6));
  const double p1 = layout.uniform(0, 6.3), p2 = layout.uniform(0, 6.3);

  std::vector<double> sx(w), cy(h);
  for (std::size_t x = 0; x < w; ++x) sx[x] = 0.08 * std::sin((static_cast<double>(x) + 0.5) * 0.11 + p1);
  for (std::size_t y = 0; y < h; ++y) cy[y] = std::cos((static_cast<double>(y) + 0.5) * 0.07 + p2);

  std::vector<double> rgb(h * w * 3), th(h * w * 3);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
      const double pattern = sx[x] * cy[y];
      std::array<double, 3> c;
      for (int k = 0; k < 3; ++k) c[k] = a.rgb_background[k] + pattern * (k == 1 ? -1.0 : 1.0);
      double heat = a.thermal_background + 0.05 * py / static_cast<double>(h);
      if (distractor) {
        const double al = ellipse_alpha(px, py, *distractor);
        for (int k = 0; k < 3; ++k) c[k] = (1 - al) * c[k] + al * a.rgb_distractor[k];
        heat += (a.thermal_distractor - a.thermal_background) * blob(px, py, *distractor);
      }
      const double al = ellipse_alpha(px, py, target);
      if (al > 0.0) {
        const double stripe =
            1.0 + 0.25 * std::sin(2 * std::numbers::pi * (px - target.x0()) / a.stripe_period + a.stripe_phase);
        for (int k = 0; k < 3; ++k) c[k] = (1 - al) * c[k] + al * a.rgb_target[k] * stripe;
      }
      heat = std::max(heat, a.thermal_background + (a.thermal_target - a.thermal_background) * blob(px, py, target));
      const auto i = (y * w + x) * 3;
      for (int k = 0; k < 3; ++k) rgb[i + k] = std::clamp(c[k] + noise.uniform(-kRgbNoise, kRgbNoise), 0.0, 1.0);
      const double tv = std::clamp(heat + noise.uniform(-kThermalNoise, kThermalNoise), 0.0, 1.0);
      th[i] = th[i + 1] = th[i + 2] = tv;
    }
  }
  return {Tensor::from({h, w, 3}, std::move(rgb)), Tensor::from({h, w, 3}, std::move(th))};
}

void apply_degradation(ImagePair& frame, Modality m, Degradation kind, std::uint64_t noise_seed) {
  if (kind == Degradation::clean) return;
  Tensor& img = m == Modality::rgb ? frame.rgb : frame.thermal;
  std::vector<double> v(img.data().begin(), img.data().end());
  switch (kind) {
    case Degradation::noise: {
      Rng rng(noise_seed);
      if (m == Modality::thermal) {
        for (std::size_t i = 0; i < v.size(); i += 3) v[i] = v[i + 1] = v[i + 2] = rng.uniform();
      } else {
        for (auto& x : v) x = rng.uniform();
      }
      break;
    }
    case Degradation::blank:
      std::fill(v.begin(), v.end(), 0.0);
      break;
    case Degradation::dim:
      for (auto& x : v) x *= 0.2;
      break;
    case Degradation::clean:
      break;
  }
  img = Tensor::from(img.shape(), std::move(v));
}

ImagePair render_frame(const SyntheticScenario& s, std::size_t t) {
  ImagePair f = render_clean_frame(s, t);
  for (auto m : {Modality::rgb, Modality::thermal}) {
    apply_degradation(f, m, s.schedule[t][static_cast<int>(m)], mix_seed(s.spec.seed, t, 2 + static_cast<int>(m)));
  }
  return f;
}

std::vector<FrameAnnotation> scenario_annotations(const SyntheticScenario& s) {
  std::vector<FrameAnnotation> ann;
  for (const auto& b : s.boxes) ann.push_back({b, b, true});
  return ann;
}

Sequence generate_sequence(const SyntheticScenario& s) {
  Sequence seq;
  for (std::size_t t = 0; t < s.boxes.size(); ++t) seq.frames.push_back(render_frame(s, t));
  seq.annotations = scenario_annotations(s);
  return seq;
}

}  // namespace fusetrack
