// SPDX-License-Identifier: Apache-2.0

#include "fusetrack/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "fusetrack/tensor.hpp"

namespace fusetrack {

namespace {

void check_box(const BoundingBox& b) {
  if (!(b.w > 0.0) || !(b.h > 0.0)) throw DomainError("iou: box must have positive width and height");
}

struct FrameScores {
  std::vector<double> errors;
  std::vector<double> ious;
  std::vector<double> min_errors;
  std::vector<double> max_ious;
};

FrameScores score_frames(const std::vector<BoundingBox>& pred, const std::vector<FrameAnnotation>& ann) {
  if (pred.size() != ann.size()) {
    throw ContractError("evaluation: " + std::to_string(pred.size()) + " predictions for " + std::to_string(ann.size()) +
                        " annotated frames");
  }
  FrameScores s;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const auto& a = ann[i];
    if (!a.valid) continue;
    if (!a.rgb_gt && !a.thermal_gt) throw ContractError("evaluation: valid frame without ground truth");
    const BoundingBox& primary = a.rgb_gt ? *a.rgb_gt : *a.thermal_gt;
    s.errors.push_back(center_error(pred[i], primary));
    s.ious.push_back(iou(pred[i], primary));
    double e = INFINITY, o = -INFINITY;
    for (const auto* gt : {&a.rgb_gt, &a.thermal_gt}) {
      if (!*gt) continue;
      e = std::min(e, center_error(pred[i], **gt));
      o = std::max(o, iou(pred[i], **gt));
    }
    s.min_errors.push_back(e);
    s.max_ious.push_back(o);
  }
  return s;
}

}  // namespace

double iou(const BoundingBox& a, const BoundingBox& b) {
  check_box(a);
  check_box(b);
  const double iw = std::max(0.0, std::min(a.x1(), b.x1()) - std::max(a.x0(), b.x0()));
  const double ih = std::max(0.0, std::min(a.y1(), b.y1()) - std::max(a.y0(), b.y0()));
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

double center_error(const BoundingBox& a, const BoundingBox& b) { return std::hypot(a.cx - b.cx, a.cy - b.cy); }

double precision_rate(const std::vector<double>& errors, double tau) {
  if (!(tau > 0.0)) throw DomainError("precision_rate: threshold must be positive");
  if (errors.empty()) throw ContractError("precision_rate: no frames to evaluate");
  const auto hits = std::count_if(errors.begin(), errors.end(), [tau](double e) { return e < tau; });
  return static_cast<double>(hits) / static_cast<double>(errors.size());
}

std::vector<double> success_thresholds() {
  std::vector<double> t(21);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(i) / 20.0;
  return t;
}

SuccessResult success_rate(const std::vector<double>& ious) {
  if (ious.empty()) throw ContractError("success_rate: no frames to evaluate");
  for (double v : ious) {
    if (!(v >= 0.0 && v <= 1.0)) throw DomainError("success_rate: IoU outside [0, 1]");
  }
  SuccessResult r{0.0, {}};
  for (double t : success_thresholds()) {
    const auto hits = std::count_if(ious.begin(), ious.end(), [t](double v) { return v > t; });
    const double frac = static_cast<double>(hits) / static_cast<double>(ious.size());
    r.curve.push_back({t, frac});
    r.sr += frac;
  }
  r.sr /= static_cast<double>(r.curve.size());
  return r;
}

std::vector<CurvePoint> precision_curve(const std::vector<double>& errors) {
  std::vector<CurvePoint> c;
  for (int t = 0; t <= 50; ++t) {
    const double tau = static_cast<double>(t);
    const auto hits = std::count_if(errors.begin(), errors.end(), [tau](double e) { return e < tau; });
    c.push_back({tau, errors.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(errors.size())});
  }
  return c;
}

MaxRates mpr_msr(const std::vector<BoundingBox>& pred, const std::vector<FrameAnnotation>& ann, double tau) {
  const auto s = score_frames(pred, ann);
  return {precision_rate(s.min_errors, tau), success_rate(s.max_ious).sr};
}

EvalReport evaluate(const std::vector<BoundingBox>& pred, const std::vector<FrameAnnotation>& ann, double tau) {
  const auto s = score_frames(pred, ann);
  EvalReport r;
  r.tau = tau;
  r.frame_count = s.errors.size();
  r.pr = precision_rate(s.errors, tau);
  auto succ = success_rate(s.ious);
  r.sr = succ.sr;
  r.success_curve = std::move(succ.curve);
  r.precision_curve = precision_curve(s.errors);
  r.mpr = precision_rate(s.min_errors, tau);
  auto msucc = success_rate(s.max_ious);
  r.msr = msucc.sr;
  r.max_success_curve = std::move(msucc.curve);
  r.max_precision_curve = precision_curve(s.min_errors);
  return r;
}

EvalReport aggregate(const std::vector<EvalReport>& reports) {
  if (reports.empty()) throw ContractError("aggregate: no reports");
  EvalReport out = reports.front();
  std::size_t total = 0;
  for (const auto& r : reports) total += r.frame_count;
  if (total == 0) throw ContractError("aggregate: no frames");
  auto weighted = [&](auto member) {
    // Summed in sorted order so the result does not depend on report order.
    std::vector<double> terms;
    for (const auto& r : reports) terms.push_back(member(r) * static_cast<double>(r.frame_count));
    std::sort(terms.begin(), terms.end());
    double acc = 0.0;
    for (double t : terms) acc += t;
    return acc / static_cast<double>(total);
  };
  out.pr = weighted([](const EvalReport& r) { return r.pr; });
  out.sr = weighted([](const EvalReport& r) { return r.sr; });
  out.mpr = weighted([](const EvalReport& r) { return r.mpr; });
  out.msr = weighted([](const EvalReport& r) { return r.msr; });
  auto curve = [&](std::vector<CurvePoint> EvalReport::*field) {
    auto& c = out.*field;
    for (std::size_t i = 0; i < c.size(); ++i) {
      c[i].value = weighted([&](const EvalReport& r) { return (r.*field)[i].value; });
    }
  };
  curve(&EvalReport::precision_curve);
  curve(&EvalReport::success_curve);
  curve(&EvalReport::max_precision_curve);
  curve(&EvalReport::max_success_curve);
  out.frame_count = total;
  return out;
}

}  // namespace fusetrack
