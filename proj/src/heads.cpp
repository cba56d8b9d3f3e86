// SPDX-License-Identifier: Apache-2.0

#include "fusetrack/heads.hpp"

#include <cmath>
#include <numbers>

namespace fusetrack {

namespace {

Tensor he_normal(std::size_t fan_in, std::size_t out, Rng& rng) {
  return rng.truncated_normal_tensor({fan_in, out}, std::sqrt(2.0 / static_cast<double>(fan_in)));
}

void collect_bn(const BatchNormState& bn, std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix) {
  out.emplace_back(prefix + "running_mean", bn.running_mean);
  out.emplace_back(prefix + "running_var", bn.running_var);
}

HeadBranch make_branch(std::size_t in, std::size_t channels, std::size_t out, double out_bias, Rng& rng) {
  HeadBranch b;
  std::size_t c = in;
  for (std::size_t i = 0, next = channels; i < 3; ++i, next = std::max<std::size_t>(1, next / 2)) {
    b.stages.push_back(ConvBnRelu::random(c, next, 1, rng));
    c = next;
  }
  b.output.weight = rng.truncated_normal_tensor({9 * c, out}, 0.01);
  b.output.bias = Tensor::full({out}, out_bias, true);
  return b;
}

Tensor run_branch(HeadBranch& branch, const Tensor& x, std::size_t batch, std::size_t side, bool training) {
  Tensor y = x;
  for (auto& stage : branch.stages) y = apply(stage, y, batch, side, training);
  return apply(branch.output, y, batch, side);
}

}  // namespace

ConvBnRelu ConvBnRelu::random(std::size_t in, std::size_t out, std::size_t stride, Rng& rng) {
  ConvBnRelu l;
  l.weight = he_normal(9 * in, out, rng);
  l.weight.set_requires_grad(true);
  l.bias = Tensor::zeros({out}, true);
  l.gamma = Tensor::full({out}, 1.0, true);
  l.beta = Tensor::zeros({out}, true);
  l.bn.running_mean = Tensor::zeros({out});
  l.bn.running_var = Tensor::full({out}, 1.0);
  l.stride = stride;
  return l;
}

void ConvBnRelu::register_parameters(ParameterSet& params, const std::string& prefix) const {
  params.add(prefix + "weight", weight, ParamGroup::other);
  params.add(prefix + "bias", bias, ParamGroup::other);
  params.add(prefix + "bn_gamma", gamma, ParamGroup::other);
  params.add(prefix + "bn_beta", beta, ParamGroup::other);
}

void ConvBnRelu::collect_buffers(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix) const {
  collect_bn(bn, out, prefix + "bn_");
}

Conv3x3 Conv3x3::random(std::size_t in, std::size_t out, Rng& rng) {
  Conv3x3 c;
  c.weight = he_normal(9 * in, out, rng);
  c.weight.set_requires_grad(true);
  c.bias = Tensor::zeros({out}, true);
  return c;
}

void Conv3x3::register_parameters(ParameterSet& params, const std::string& prefix) const {
  params.add(prefix + "weight", weight, ParamGroup::other);
  params.add(prefix + "bias", bias, ParamGroup::other);
}

Tensor apply(ConvBnRelu& layer, const Tensor& x, std::size_t batch, std::size_t& side, bool training) {
  Tensor cols = im2col3x3(x, batch, side, layer.stride);
  side = conv_out_side(side, layer.stride);
  Tensor y = add_row(matmul(cols, layer.weight), layer.bias);
  return relu(batch_norm(y, layer.gamma, layer.beta, layer.bn, training));
}

Tensor apply(const Conv3x3& layer, const Tensor& x, std::size_t batch, std::size_t side) {
  return add_row(matmul(im2col3x3(x, batch, side, 1), layer.weight), layer.bias);
}

CenterHead CenterHead::random(std::size_t in_channels, std::size_t channels, Rng& rng) {
  CenterHead h;
  // Score bias starts at the logit of a 0.1 prior, as is usual for focal-loss heatmaps.
  h.score = make_branch(in_channels, channels, 1, -2.19, rng);
  h.offset = make_branch(in_channels, channels, 2, 0.0, rng);
  h.size = make_branch(in_channels, channels, 2, 0.0, rng);
  return h;
}

void CenterHead::register_parameters(ParameterSet& params, const std::string& prefix) const {
  const std::pair<const char*, const HeadBranch*> branches[] = {{"score", &score}, {"offset", &offset}, {"size", &size}};
  for (const auto& [name, b] : branches) {
    for (std::size_t i = 0; i < b->stages.size(); ++i)
      b->stages[i].register_parameters(params, prefix + name + ".stage" + std::to_string(i) + ".");
    b->output.register_parameters(params, prefix + name + ".out.");
  }
}

void CenterHead::collect_buffers(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix) const {
  const std::pair<const char*, const HeadBranch*> branches[] = {{"score", &score}, {"offset", &offset}, {"size", &size}};
  for (const auto& [name, b] : branches)
    for (std::size_t i = 0; i < b->stages.size(); ++i)
      b->stages[i].collect_buffers(out, prefix + name + ".stage" + std::to_string(i) + ".");
}

std::size_t grid_side(std::size_t tokens) {
  const auto s = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(tokens))));
  if (s * s != tokens) throw ShapeError(std::to_string(tokens) + " tokens do not form a square grid");
  return s;
}

PredictionMaps center_head_forward(const Tensor& features, CenterHead& head, std::size_t batch, bool training) {
  if (batch == 0 || features.rows() % batch != 0) throw ShapeError("center head: rows not divisible by batch");
  const auto side = grid_side(features.rows() / batch);
  PredictionMaps maps;
  maps.side = side;
  maps.batch = batch;
  maps.score = clamp(sigmoid(run_branch(head.score, features, batch, side, training)), kScoreFloor, 1.0 - kScoreFloor);
  maps.offset = sigmoid(run_branch(head.offset, features, batch, side, training));
  maps.size = sigmoid(run_branch(head.size, features, batch, side, training));
  return maps;
}

PredictionMaps make_prediction_maps(std::size_t side, std::vector<double> score, std::vector<double> offset,
                                    std::vector<double> size) {
  const auto n = side * side;
  PredictionMaps m;
  m.side = side;
  m.batch = 1;
  m.score = Tensor::from({n, 1}, std::move(score));
  m.offset = Tensor::from({n, 2}, std::move(offset));
  m.size = Tensor::from({n, 2}, std::move(size));
  return m;
}

std::vector<double> hanning_window(std::size_t side) {
  std::vector<double> w1(side);
  for (std::size_t k = 0; k < side; ++k)
    w1[k] = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * static_cast<double>(k + 1) / static_cast<double>(side + 1)));
  std::vector<double> w(side * side);
  for (std::size_t i = 0; i < side; ++i)
    for (std::size_t j = 0; j < side; ++j) w[i * side + j] = w1[i] * w1[j];
  return w;
}

BoundingBox decode_box(const PredictionMaps& maps, std::size_t b, const std::vector<double>* window) {
  const auto s = maps.side, n = s * s;
  if (b >= maps.batch) throw RangeError("decode_box: sample index out of range");
  if (window && window->size() != n) throw ShapeError("decode_box: window does not match the score grid");
  std::size_t best = 0;
  double best_v = -INFINITY;
  for (std::size_t c = 0; c < n; ++c) {
    double v = maps.score[b * n + c];
    if (window) v *= (*window)[c];
    if (v > best_v) {
      best_v = v;
      best = c;
    }
  }
  const auto row = best / s, col = best % s;
  const auto cell = b * n + best;
  const double sd = static_cast<double>(s);
  return clamp_to_unit({(static_cast<double>(col) + maps.offset[cell * 2]) / sd,
                        (static_cast<double>(row) + maps.offset[cell * 2 + 1]) / sd, maps.size[cell * 2],
                        maps.size[cell * 2 + 1]});
}

Tensor boxes_at_cells(const PredictionMaps& maps, const std::vector<std::pair<std::size_t, std::size_t>>& cells) {
  if (cells.size() != maps.batch) throw ShapeError("boxes_at_cells: one cell per sample expected");
  const auto s = maps.side;
  std::vector<std::size_t> idx;
  for (std::size_t b = 0; b < cells.size(); ++b) {
    if (cells[b].first >= s || cells[b].second >= s) throw RangeError("boxes_at_cells: cell outside the grid");
    idx.push_back((b * s + cells[b].first) * s + cells[b].second);
  }
  Tensor off = gather_rows(maps.offset, idx);
  Tensor sz = gather_rows(maps.size, idx);
  const double inv = 1.0 / static_cast<double>(s);
  std::vector<double> grid(cells.size() * 2);
  for (std::size_t b = 0; b < cells.size(); ++b) {
    grid[b * 2] = static_cast<double>(cells[b].second) * inv;
    grid[b * 2 + 1] = static_cast<double>(cells[b].first) * inv;
  }
  Tensor centers = add(scale(off, inv), Tensor::from({cells.size(), 2}, std::move(grid)));
  return concat_cols({centers, sz});
}

ReliabilityHead ReliabilityHead::random(std::size_t in_channels, std::size_t channels, Rng& rng) {
  ReliabilityHead h;
  std::size_t c = in_channels;
  for (std::size_t i = 0, next = channels; i < 3; ++i, next = std::max<std::size_t>(1, next / 2)) {
    h.stages.push_back(ConvBnRelu::random(c, next, 2, rng));
    c = next;
  }
  h.fc_weight = rng.truncated_normal_tensor({c, 1}, 0.02);
  h.fc_bias = Tensor::zeros({1}, true);
  return h;
}

void ReliabilityHead::register_parameters(ParameterSet& params, const std::string& prefix) const {
  for (std::size_t i = 0; i < stages.size(); ++i) stages[i].register_parameters(params, prefix + "stage" + std::to_string(i) + ".");
  params.add(prefix + "fc_weight", fc_weight, ParamGroup::other);
  params.add(prefix + "fc_bias", fc_bias, ParamGroup::other);
}

void ReliabilityHead::collect_buffers(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix) const {
  for (std::size_t i = 0; i < stages.size(); ++i) stages[i].collect_buffers(out, prefix + "stage" + std::to_string(i) + ".");
}

Tensor reliability_forward(const Tensor& features, ReliabilityHead& head, std::size_t batch, bool training) {
  if (batch == 0 || features.rows() % batch != 0) throw ShapeError("reliability head: rows not divisible by batch");
  std::size_t side = grid_side(features.rows() / batch);
  Tensor y = features;
  for (auto& stage : head.stages) y = apply(stage, y, batch, side, training);
  return add_row(matmul(mean_pool_rows(y, batch), head.fc_weight), head.fc_bias);
}

const char* modality_name(Modality m) { return m == Modality::rgb ? "rgb" : "thermal"; }

std::pair<double, double> reliability_weights(double r_rgb, double r_t) {
  if (!std::isfinite(r_rgb) || !std::isfinite(r_t)) throw DomainError("reliability scores must be finite");
  // Written as a logistic of the difference so the pair sums to one to rounding.
  const double d = r_rgb - r_t;
  const double l_rgb = d >= 0 ? 1.0 / (1.0 + std::exp(-d)) : std::exp(d) / (1.0 + std::exp(d));
  const double l_t = d >= 0 ? std::exp(-d) / (1.0 + std::exp(-d)) : 1.0 / (1.0 + std::exp(d));
  return {l_rgb, l_t};
}

ReliabilityScores make_reliability(double r_rgb, double r_t) {
  auto [a, b] = reliability_weights(r_rgb, r_t);
  return {r_rgb, r_t, a, b};
}

TrackOutput select_output(const BoundingBox& rgb_box, const BoundingBox& t_box, const ReliabilityScores& scores) {
  TrackOutput out;
  out.reliability = scores;
  out.both_boxes = {rgb_box, t_box};
  out.chosen = scores.r_rgb >= scores.r_t ? Modality::rgb : Modality::thermal;
  out.box = out.both_boxes[static_cast<int>(out.chosen)];
  return out;
}

}  // namespace fusetrack
