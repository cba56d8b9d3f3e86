// SPDX-License-Identifier: Apache-2.0
//
// Tracking evaluation: precision rate (center error under a pixel threshold),
// success rate (area under the IoU success plot) and their dual-ground-truth
// variants, which score each frame against whichever modality's annotation
// fits better.

#pragma once

#include <optional>
#include <vector>

#include "fusetrack/box.hpp"

namespace fusetrack {

inline constexpr double kDefaultPrecisionThreshold = 20.0;

struct FrameAnnotation {
  std::optional<BoundingBox> rgb_gt;      // pixels
  std::optional<BoundingBox> thermal_gt;  // pixels
  bool valid = true;
};

struct CurvePoint {
  double threshold;
  double value;
};

struct EvalReport {
  double pr = 0.0;
  double sr = 0.0;
  double mpr = 0.0;
  double msr = 0.0;
  std::vector<CurvePoint> precision_curve;  // over distance thresholds 0..50 px
  std::vector<CurvePoint> success_curve;    // over the overlap grid
  std::vector<CurvePoint> max_precision_curve;
  std::vector<CurvePoint> max_success_curve;
  std::size_t frame_count = 0;
  double tau = kDefaultPrecisionThreshold;
};

double iou(const BoundingBox& a, const BoundingBox& b);
double center_error(const BoundingBox& a, const BoundingBox& b);

// Fraction of errors strictly below tau.
double precision_rate(const std::vector<double>& errors, double tau = kDefaultPrecisionThreshold);

// Overlap thresholds 0, 0.05, ..., 1.0.
std::vector<double> success_thresholds();

struct SuccessResult {
  double sr;
  std::vector<CurvePoint> curve;
};

// success(t) = fraction of IoUs strictly greater than t; sr is the curve mean.
SuccessResult success_rate(const std::vector<double>& ious);

// Precision at integer pixel thresholds 0..50.
std::vector<CurvePoint> precision_curve(const std::vector<double>& errors);

struct MaxRates {
  double mpr;
  double msr;
};

// Per frame: smallest center error and largest IoU over the available
// ground truths. Invalid frames are skipped.
MaxRates mpr_msr(const std::vector<BoundingBox>& pred, const std::vector<FrameAnnotation>& ann,
                 double tau = kDefaultPrecisionThreshold);

// PR/SR against the RGB ground truth (thermal when RGB is absent) plus MPR/MSR.
EvalReport evaluate(const std::vector<BoundingBox>& pred, const std::vector<FrameAnnotation>& ann,
                    double tau = kDefaultPrecisionThreshold);

// Frame-count-weighted mean of per-sequence reports (curves averaged likewise).
EvalReport aggregate(const std::vector<EvalReport>& reports);

}  // namespace fusetrack
