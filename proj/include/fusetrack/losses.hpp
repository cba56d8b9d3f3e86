// SPDX-License-Identifier: Apache-2.0
//
// Per-head tracking loss (focal + weighted GIoU + weighted L1) and the
// reliability-weighted total: softmax(R_rgb, R_t) weights the two head losses.

#pragma once

#include <utility>
#include <vector>

#include "fusetrack/box.hpp"
#include "fusetrack/heads.hpp"
#include "fusetrack/tensor.hpp"

namespace fusetrack {

struct LossWeights {
  double giou = 2.0;
  double l1 = 5.0;
};

inline constexpr double kFocalAlpha = 2.0;
inline constexpr double kFocalBeta = 4.0;

struct HeadLossParts {
  double cls = 0.0;
  double giou = 0.0;
  double l1 = 0.0;
  double total = 0.0;
};

struct LossBreakdown {
  HeadLossParts rgb;
  HeadLossParts thermal;
  double total = 0.0;
  double lambda_rgb = 0.5;
  double lambda_t = 0.5;
};

// Cell holding the box center: (floor(cy*S), floor(cx*S)) clamped to the grid.
std::pair<std::size_t, std::size_t> center_cell(const BoundingBox& box, std::size_t side);

// Radius (in cells) of the Gaussian peak for a box of the given size in cells.
double gaussian_radius(double height, double width, double min_overlap = 0.7);

// [S, S] heat map with value 1 at the center cell, decaying as a Gaussian whose
// sigma grows with the box size.
Tensor gaussian_target(const BoundingBox& gt, std::size_t side);

// Penalty-reduced focal loss normalized by the number of peak cells.
double focal_loss(const Tensor& pred, const Tensor& target);
double l1_box_loss(const BoundingBox& pred, const BoundingBox& gt);
double giou(const BoundingBox& a, const BoundingBox& b);
double giou_loss(const BoundingBox& pred, const BoundingBox& gt);

// Loss of one head on one sample, box terms read at the ground-truth center cell.
HeadLossParts head_loss(const PredictionMaps& maps, const BoundingBox& gt, const LossWeights& weights);

struct TotalLoss {
  double total;
  double lambda_rgb;
  double lambda_t;
};

TotalLoss total_loss(double loss_rgb, double loss_t, double r_rgb, double r_t);

// --- Recorded forms, one value per sample ([batch, 1]) ----------------------

Tensor focal_loss_op(const Tensor& score, const std::vector<Tensor>& targets);
Tensor giou_loss_op(const Tensor& boxes, const std::vector<BoundingBox>& gt);
Tensor l1_loss_op(const Tensor& boxes, const std::vector<BoundingBox>& gt);

struct HeadLossTensors {
  Tensor per_sample;  // [batch, 1]
  HeadLossParts mean_parts;
};

HeadLossTensors head_loss_op(const PredictionMaps& maps, const std::vector<BoundingBox>& gt,
                             const LossWeights& weights);

// mean_b(lambda_rgb_b * L_rgb_b + lambda_t_b * L_t_b) with (lambda) = softmax(R).
// Also returns the batch-mean lambdas.
struct TotalLossTensors {
  Tensor total;
  double lambda_rgb;
  double lambda_t;
};
TotalLossTensors total_loss_op(const Tensor& loss_rgb, const Tensor& loss_t, const Tensor& r_rgb, const Tensor& r_t);

}  // namespace fusetrack
