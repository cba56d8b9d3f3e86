// SPDX-License-Identifier: Apache-2.0
//
// Center-style prediction heads, reliability heads and the selection rule.
//
// Feature maps are kept as [batch * S * S, C] tensors whose rows are grid
// cells in row-major order, which is also the token order coming out of the
// backbone, so reshaping tokens to a grid is free.

#pragma once

#include <array>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fusetrack/box.hpp"
#include "fusetrack/optim.hpp"
#include "fusetrack/tensor.hpp"

namespace fusetrack {

// Probabilities from the score branch are clamped to this band.
inline constexpr double kScoreFloor = 1e-4;

struct ConvBnRelu {
  Tensor weight;  // [9 * in, out]
  Tensor bias;    // [out]
  Tensor gamma, beta;
  BatchNormState bn;
  std::size_t stride = 1;

  static ConvBnRelu random(std::size_t in, std::size_t out, std::size_t stride, Rng& rng);
  void register_parameters(ParameterSet& params, const std::string& prefix) const;
  void collect_buffers(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix) const;
};

// Plain 3x3 convolution (no normalization), used as a branch output layer.
struct Conv3x3 {
  Tensor weight;  // [9 * in, out]
  Tensor bias;

  static Conv3x3 random(std::size_t in, std::size_t out, Rng& rng);
  void register_parameters(ParameterSet& params, const std::string& prefix) const;
};

// Applies the layer to [batch * side * side, in]; updates `side` for strides.
Tensor apply(ConvBnRelu& layer, const Tensor& x, std::size_t batch, std::size_t& side, bool training);
Tensor apply(const Conv3x3& layer, const Tensor& x, std::size_t batch, std::size_t side);

struct HeadBranch {
  std::vector<ConvBnRelu> stages;
  Conv3x3 output;
};

// Three branches (score, offset, size), each three Conv-BN-ReLU stages with
// channels in -> c -> c/2 -> c/4 and a final 3x3 conv.
struct CenterHead {
  HeadBranch score, offset, size;

  static CenterHead random(std::size_t in_channels, std::size_t channels, Rng& rng);
  void register_parameters(ParameterSet& params, const std::string& prefix) const;
  void collect_buffers(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix) const;
};

struct PredictionMaps {
  Tensor score;   // [batch*S*S, 1] in (0,1)
  Tensor offset;  // [batch*S*S, 2] (x, y) in (0,1)
  Tensor size;    // [batch*S*S, 2] (w, h) in (0,1)
  std::size_t side = 0;
  std::size_t batch = 1;

  double score_at(std::size_t b, std::size_t row, std::size_t col) const {
    return score[(b * side + row) * side + col];
  }
};

// Builds single-sample maps from plain arrays (row-major S*S cells).
PredictionMaps make_prediction_maps(std::size_t side, std::vector<double> score, std::vector<double> offset,
                                    std::vector<double> size);

// Features [batch * N_x, D] with N_x a perfect square.
PredictionMaps center_head_forward(const Tensor& features, CenterHead& head, std::size_t batch, bool training);

// Side of the square grid holding `tokens` cells; ShapeError if not square.
std::size_t grid_side(std::size_t tokens);

// Cosine window over an S x S grid, outer product of 1-d Hanning windows.
std::vector<double> hanning_window(std::size_t side);

// Argmax of the (optionally windowed) score map of sample `b`; ties go to the
// smallest row-major index. Result is clamped to the unit square.
BoundingBox decode_box(const PredictionMaps& maps, std::size_t b = 0, const std::vector<double>* window = nullptr);

// Differentiable boxes (cx, cy, w, h) read at given cells, one per sample:
// cx = (col + offset_x) / S, cy = (row + offset_y) / S, (w, h) = size.
Tensor boxes_at_cells(const PredictionMaps& maps, const std::vector<std::pair<std::size_t, std::size_t>>& cells);

// Three stride-2 Conv-BN-ReLU stages, global average pooling, linear -> scalar.
struct ReliabilityHead {
  std::vector<ConvBnRelu> stages;
  Tensor fc_weight;  // [c, 1]
  Tensor fc_bias;    // [1]

  static ReliabilityHead random(std::size_t in_channels, std::size_t channels, Rng& rng);
  void register_parameters(ParameterSet& params, const std::string& prefix) const;
  void collect_buffers(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix) const;
};

// Returns [batch, 1] reliability scores.
Tensor reliability_forward(const Tensor& features, ReliabilityHead& head, std::size_t batch, bool training);

enum class Modality { rgb = 0, thermal = 1 };
const char* modality_name(Modality m);

struct ReliabilityScores {
  double r_rgb = 0.0;
  double r_t = 0.0;
  double lambda_rgb = 0.5;
  double lambda_t = 0.5;
};

// Two-way softmax.
std::pair<double, double> reliability_weights(double r_rgb, double r_t);
ReliabilityScores make_reliability(double r_rgb, double r_t);

struct TrackOutput {
  BoundingBox box;
  Modality chosen = Modality::rgb;
  ReliabilityScores reliability;
  std::array<BoundingBox, 2> both_boxes;
};

// Picks the box of the modality with the higher reliability; ties go to RGB.
TrackOutput select_output(const BoundingBox& rgb_box, const BoundingBox& t_box, const ReliabilityScores& scores);

}  // namespace fusetrack
