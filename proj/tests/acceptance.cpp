// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite: one PASS/FAIL line per criterion, each with its measured
// value, pinned tolerance and runtime budget. Exit status is nonzero when any
// criterion fails.
//
//   acceptance [--only N[,N...]] [--csv-dir DIR]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <limits>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fusetrack/ablation.hpp"
#include "fusetrack/backbone.hpp"
#include "fusetrack/checkpoint.hpp"
#include "fusetrack/config.hpp"
#include "fusetrack/io.hpp"
#include "fusetrack/losses.hpp"
#include "fusetrack/metrics.hpp"
#include "fusetrack/three_stage.hpp"
#include "fusetrack/track.hpp"

using namespace fusetrack;

namespace {

// Pinned tolerances and budgets.
constexpr double kReconstructionTol = 1e-10;
constexpr std::size_t kReconstructionConfigs = 24;
constexpr double kGradTol = 1e-4;
constexpr double kLambdaSumTol = 1e-15;
constexpr double kSelectionRate = 0.90;
constexpr std::size_t kHeldOutSequences = 20;
constexpr std::size_t kLatencySamples = 30;
constexpr std::size_t kLatencyWarmup = 10;
constexpr double kBudget1 = 10, kBudget2 = 60, kBudget3 = 5, kBudget4 = 5;
constexpr double kBudget5 = 30 * 60, kBudget6 = 30 * 60, kBudget7 = 5 * 60;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool passed = false;
  std::string detail;
};

struct Line {
  int id;
  std::string name;
  Outcome outcome;
  double seconds;
  double budget;  // <= 0: no runtime budget
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---------------------------------------------------------------------------
// 1. Block reconstruction of joint attention.

Outcome criterion_reconstruction() {
  Rng rng(4201);
  double worst = 0.0;
  for (std::size_t trial = 0; trial < kReconstructionConfigs; ++trial) {
    const std::size_t heads = 1 + rng.uniform_index(4);
    const std::size_t dim = heads * (2 + rng.uniform_index(6));
    // Half the configs keep the search/template ratio of four.
    const std::size_t nz = 1 + rng.uniform_index(4);
    const std::size_t nx = trial % 2 == 0 ? 4 * nz : 1 + rng.uniform_index(12);
    SegmentLayout layout({nx, nx, nz, nz});
    JointTokenState st{rng.uniform_tensor({layout.total(), dim}, -1, 1), layout, 1};
    auto p = EncoderLayerParams::random(dim, heads, rng);
    for (auto* t : {&p.wq, &p.wk, &p.wv}) *t = rng.uniform_tensor(t->shape(), -0.6, 0.6);
    for (auto* t : {&p.bq, &p.bk, &p.bv}) *t = rng.uniform_tensor(t->shape(), -0.2, 0.2);
    const auto r = joint_attention(st, p);
    const Tensor rec = reconstruct_from_blocks(r.decomposition, r.values);
    // Sum of the sixteen segment terms, assembled here rather than by the library.
    std::vector<double> terms(rec.size(), 0.0);
    for (auto q : kSegments)
      for (auto k : kSegments) {
        const Tensor t = segment_term(r.decomposition, r.values, q, k);
        const auto range = layout.range(q);
        for (std::size_t i = 0; i < t.rows(); ++i)
          for (std::size_t c = 0; c < dim; ++c) terms[(range.begin + i) * dim + c] += t.at(i, c);
      }
    for (std::size_t i = 0; i < rec.size(); ++i) {
      worst = std::max(worst, std::abs(rec[i] - r.output[i]));
      worst = std::max(worst, std::abs(terms[i] - r.output[i]));
    }
  }
  return {worst < kReconstructionTol, "max |diff| " + fmt("%.2e", worst) + " < " + fmt("%.0e", kReconstructionTol) +
                                          " over " + std::to_string(kReconstructionConfigs) + " configs"};
}

// ---------------------------------------------------------------------------
// 2. Central finite differences against the tape.

struct GradReport {
  std::string name;
  double error;
};

// Normwise relative error ||g_tape - g_fd|| / max(||g_tape||, ||g_fd||) over
// all inputs taken as one vector.
double fd_error(const std::function<Tensor()>& loss, std::vector<Tensor> inputs, double h) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.clear_grad();
  }
  {
    Tape tape;
    RecordingScope scope(tape);
    tape.backward(loss());
  }
  double diff2 = 0, a2 = 0, n2 = 0;
  for (auto& t : inputs) {
    std::vector<double> analytic(t.size(), 0.0);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
    auto v = t.mutable_data();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double orig = v[i];
      v[i] = orig + h;
      const double up = loss().item();
      v[i] = orig - h;
      const double down = loss().item();
      v[i] = orig;
      const double numeric = (up - down) / (2 * h);
      diff2 += (analytic[i] - numeric) * (analytic[i] - numeric);
      a2 += analytic[i] * analytic[i];
      n2 += numeric * numeric;
    }
    t.clear_grad();
  }
  const double denom = std::max(std::sqrt(a2), std::sqrt(n2));
  return denom > 0 ? std::sqrt(diff2) / denom : std::sqrt(diff2);
}

Tensor probe(const Tensor& y, const Tensor& w) { return sum(mul(y, w)); }

std::vector<GradReport> op_gradients() {
  std::vector<GradReport> out;
  Rng rng(4202);
  const std::size_t m = 4, n = 6;
  auto a = rng.uniform_tensor({m, n}, -1, 1), b = rng.uniform_tensor({m, n}, -1, 1);
  auto w = rng.uniform_tensor({m, n}, -1, 1);
  auto rhs = rng.uniform_tensor({n, 3}, -1, 1);
  auto w3 = rng.uniform_tensor({m, 3}, -1, 1);
  auto v = rng.uniform_tensor({n}, -1, 1);
  auto gain = rng.uniform_tensor({n}, 0.5, 1.5), bias = rng.uniform_tensor({n}, -0.5, 0.5);
  auto block = rng.uniform_tensor({2, n}, -1, 1);
  auto wp = rng.uniform_tensor({2, n}, -1, 1);
  auto wg = rng.uniform_tensor({3, n}, -1, 1);
  const double h = 1e-5;
  auto add_check = [&](const std::string& name, const std::function<Tensor()>& fn, std::vector<Tensor> in) {
    out.push_back({name, fd_error(fn, std::move(in), h)});
  };

  add_check("matmul", [&] { return probe(matmul(a, rhs), w3); }, {a, rhs});
  add_check("add", [&] { return probe(add(a, b), w); }, {a, b});
  add_check("sub", [&] { return probe(sub(a, b), w); }, {a, b});
  add_check("mul", [&] { return probe(mul(a, b), w); }, {a, b});
  add_check("scale", [&] { return probe(scale(a, -1.7), w); }, {a});
  add_check("add_scalar", [&] { return probe(mul(add_scalar(a, 0.3), a), w); }, {a});
  add_check("add_row", [&] { return probe(add_row(a, v), w); }, {a, v});
  add_check("add_tiled", [&] { return probe(add_tiled(a, block), w); }, {a, block});
  add_check("sum", [&] { return sum(mul(a, a)); }, {a});
  add_check("mean", [&] { return mean(mul(a, b)); }, {a, b});
  add_check("softmax_rows", [&] { return probe(softmax_rows(scale(a, 3.0)), w); }, {a});
  add_check("layer_norm", [&] { return probe(layer_norm(a, gain, bias, 1e-5), w); }, {a, gain, bias});
  add_check("gelu", [&] { return probe(gelu(scale(a, 3.0)), w); }, {a});
  add_check("relu", [&] { return probe(relu(a), w); }, {a});
  add_check("sigmoid", [&] { return probe(sigmoid(scale(a, 4.0)), w); }, {a});
  add_check("clamp", [&] { return probe(clamp(a, -0.5, 0.5), w); }, {a});
  add_check("reshape", [&] { return probe(reshape(a, {n, m}), reshape(w, {n, m})); }, {a});
  add_check("concat_rows/slice_rows", [&] { return probe(slice_rows(concat_rows({a, b}), {2, 6}), w); }, {a, b});
  add_check("concat_cols/slice_cols", [&] { return probe(slice_cols(concat_cols({a, b}), {3, 9}), w); }, {a, b});
  add_check("gather_rows", [&] { return probe(gather_rows(a, {m - 1, 0, m - 1}), wg); }, {a});
  add_check("mean_pool_rows", [&] { return probe(mean_pool_rows(a, 2), wp); }, {a});

  const std::size_t batch = 2, tokens = 5, dim = 6, heads = 2;
  auto q = rng.uniform_tensor({batch * tokens, dim}, -1, 1);
  auto k = rng.uniform_tensor({batch * tokens, dim}, -1, 1);
  auto vv = rng.uniform_tensor({batch * tokens, dim}, -1, 1);
  auto wa = rng.uniform_tensor({batch * tokens, dim}, -1, 1);
  add_check("attention_core", [&] { return probe(attention_core(q, k, vv, batch, heads), wa); }, {q, k, vv});

  const std::size_t side = 4, c = 3;
  auto x = rng.uniform_tensor({batch * side * side, c}, -1, 1);
  for (std::size_t stride : {1u, 2u}) {
    const auto os = conv_out_side(side, stride);
    auto wi = rng.uniform_tensor({batch * os * os, 9 * c}, -1, 1);
    add_check("im2col3x3 stride " + std::to_string(stride), [&] { return probe(im2col3x3(x, batch, side, stride), wi); },
              {x});
  }
  auto gamma = rng.uniform_tensor({c}, 0.5, 1.5), beta = rng.uniform_tensor({c}, -0.5, 0.5);
  auto wb = rng.uniform_tensor({batch * side * side, c}, -1, 1);
  for (bool training : {true, false}) {
    BatchNormState st{rng.uniform_tensor({c}, -0.1, 0.1), rng.uniform_tensor({c}, 0.5, 1.5)};
    add_check(std::string("batch_norm ") + (training ? "train" : "eval"),
              [&] { return probe(batch_norm(x, gamma, beta, st, training), wb); }, {x, gamma, beta});
  }

  // Loss ops.
  const std::size_t grid = 4;
  auto score = rng.uniform_tensor({batch * grid * grid, 1}, 0.05, 0.95);
  std::vector<Tensor> targets{gaussian_target({0.4, 0.6, 0.3, 0.2}, grid), gaussian_target({0.7, 0.2, 0.2, 0.4}, grid)};
  add_check("focal_loss", [&] { return sum(focal_loss_op(score, targets)); }, {score});
  auto boxes = Tensor::from({2, 4}, {0.45, 0.5, 0.3, 0.25, 0.6, 0.3, 0.15, 0.35});
  const std::vector<BoundingBox> gt{{0.5, 0.55, 0.25, 0.3}, {0.1, 0.9, 0.1, 0.1}};
  add_check("giou_loss", [&] { return sum(giou_loss_op(boxes, gt)); }, {boxes});
  auto lr = rng.uniform_tensor({3, 1}, 0, 4), lt = rng.uniform_tensor({3, 1}, 0, 4);
  auto rr = rng.uniform_tensor({3, 1}, -2, 2), rt = rng.uniform_tensor({3, 1}, -2, 2);
  add_check("total_loss", [&] { return total_loss_op(lr, lt, rr, rt).total; }, {lr, lt, rr, rt});
  return out;
}

double model_gradient() {
  ModelConfig mc;
  mc.embedding = {8, 8, 32, 64, true};
  mc.depth = 2;
  mc.heads = 2;
  mc.head_channels = 8;
  mc.reliability_channels = 8;
  auto model = TrackerModel::create(mc, 4203);
  Rng rng(4204);
  for (auto& l : model.backbone.layers)
    for (auto* t : {&l.wq, &l.wk}) {
      auto d = t->mutable_data();
      for (auto& x : d) x = rng.uniform(-0.5, 0.5);
    }
  std::vector<ImagePair> templates, searches;
  std::vector<BoundingBox> targets;
  for (int i = 0; i < 4; ++i) {
    templates.push_back({rng.uniform_tensor({32, 32, 3}, 0, 1), rng.uniform_tensor({32, 32, 3}, 0, 1)});
    searches.push_back({rng.uniform_tensor({64, 64, 3}, 0, 1), rng.uniform_tensor({64, 64, 3}, 0, 1)});
    targets.push_back({rng.uniform(0.3, 0.7), rng.uniform(0.3, 0.7), rng.uniform(0.1, 0.3), rng.uniform(0.1, 0.3)});
  }
  // Every parameter tensor of up to 16 values, plus one full attention
  // matrix per layer and the thermal modality embedding.
  std::vector<Tensor> inputs;
  const auto params = model.parameters();
  for (const auto& p : params.items())
    if (p.value.size() <= 16) inputs.push_back(p.value);
  inputs.push_back(model.backbone.layers[0].wk);
  inputs.push_back(model.backbone.layers[1].wq);
  const LossWeights weights;
  // Step 1e-6 keeps perturbations off the ReLU kinks of the heads.
  return fd_error(
      [&] {
        const auto out = model.forward(templates, searches, true);
        return compute_loss(model, out, targets, weights).total;
      },
      inputs, 1e-6);
}

Outcome criterion_gradients() {
  const auto ops = op_gradients();
  const double model_err = model_gradient();
  double worst = 0;
  std::string worst_name;
  for (const auto& r : ops) {
    if (r.error > worst || worst_name.empty()) {
      worst = r.error;
      worst_name = r.name;
    }
  }
  const bool ok = worst < kGradTol && model_err < kGradTol;
  return {ok, std::to_string(ops.size()) + " ops, worst " + worst_name + " " + fmt("%.2e", worst) +
                  "; 2-layer model " + fmt("%.2e", model_err) + " < " + fmt("%.0e", kGradTol)};
}

// ---------------------------------------------------------------------------
// 3. Adaptive weighting contracts.

Outcome criterion_weighting() {
  Rng rng(4205);
  double lambda_err = 0, bound_violation = 0, shift_err = 0;
  std::size_t sign_checked = 0, sign_bad = 0;
  for (int i = 0; i < 2000; ++i) {
    const double l_rgb = rng.uniform(0, 6), l_t = rng.uniform(0, 6);
    const double r_rgb = rng.uniform(-8, 8), r_t = rng.uniform(-8, 8);
    const auto t = total_loss(l_rgb, l_t, r_rgb, r_t);
    lambda_err = std::max(lambda_err, std::abs(t.lambda_rgb + t.lambda_t - 1.0));
    bound_violation = std::max(bound_violation, std::min(l_rgb, l_t) - t.total);
    bound_violation = std::max(bound_violation, t.total - std::max(l_rgb, l_t));
    const double c = rng.uniform(-20, 20);
    const auto shifted = total_loss(l_rgb, l_t, r_rgb + c, r_t + c);
    shift_err = std::max(shift_err, std::abs(shifted.total - t.total) / std::max(1.0, std::abs(t.total)));
    shift_err = std::max(shift_err, std::abs(shifted.lambda_rgb - t.lambda_rgb));
    // Descent on R_RGB moves along -d total/d R_RGB, whose sign is the sign of
    // L_T - L_RGB: weight flows to the smaller loss.
    if (std::abs(l_t - l_rgb) > 1e-3 && std::abs(r_rgb - r_t) < 6) {
      const double h = 1e-6;
      const double d = (total_loss(l_rgb, l_t, r_rgb + h, r_t).total - total_loss(l_rgb, l_t, r_rgb - h, r_t).total) /
                       (2 * h);
      ++sign_checked;
      if ((-d > 0) != (l_t - l_rgb > 0) || d == 0) ++sign_bad;
    }
  }
  // Batched recorded op obeys the same bound.
  auto lr = rng.uniform_tensor({16, 1}, 0, 5), lt = rng.uniform_tensor({16, 1}, 0, 5);
  auto rr = rng.uniform_tensor({16, 1}, -3, 3), rt = rng.uniform_tensor({16, 1}, -3, 3);
  const auto op = total_loss_op(lr, lt, rr, rt);
  double lo = 0, hi = 0;
  for (std::size_t b = 0; b < 16; ++b) {
    lo += std::min(lr[b], lt[b]) / 16;
    hi += std::max(lr[b], lt[b]) / 16;
  }
  if (op.total.item() < lo - 1e-12 || op.total.item() > hi + 1e-12) bound_violation = std::max(bound_violation, 1.0);

  const bool ok = lambda_err <= kLambdaSumTol && bound_violation <= 0.0 && shift_err < 1e-12 && sign_bad == 0 &&
                  sign_checked > 1000;
  return {ok, "|lambda sum - 1| " + fmt("%.1e", lambda_err) + " <= 1e-15, bound violation " +
                  fmt("%.1e", std::max(0.0, bound_violation)) + ", shift " + fmt("%.1e", shift_err) + ", sign " +
                  std::to_string(sign_checked - sign_bad) + "/" + std::to_string(sign_checked)};
}

// ---------------------------------------------------------------------------
// 4. Metrics against a frame-by-frame oracle.

struct OracleRates {
  double pr, sr, mpr, msr;
};

double oracle_iou(const BoundingBox& a, const BoundingBox& b) {
  const double ix = std::max(0.0, std::min(a.cx + a.w / 2, b.cx + b.w / 2) - std::max(a.cx - a.w / 2, b.cx - b.w / 2));
  const double iy = std::max(0.0, std::min(a.cy + a.h / 2, b.cy + b.h / 2) - std::max(a.cy - a.h / 2, b.cy - b.h / 2));
  return ix * iy / (a.w * a.h + b.w * b.h - ix * iy);
}

double oracle_dist(const BoundingBox& a, const BoundingBox& b) {
  return std::sqrt((a.cx - b.cx) * (a.cx - b.cx) + (a.cy - b.cy) * (a.cy - b.cy));
}

OracleRates oracle(const std::vector<BoundingBox>& pred, const std::vector<FrameAnnotation>& ann, double tau) {
  double n = 0, pr = 0, mpr = 0;
  std::vector<double> ov, mov;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!ann[i].valid) continue;
    n += 1;
    const auto& primary = ann[i].rgb_gt ? *ann[i].rgb_gt : *ann[i].thermal_gt;
    pr += oracle_dist(pred[i], primary) < tau;
    ov.push_back(oracle_iou(pred[i], primary));
    double best_d = std::numeric_limits<double>::infinity(), best_o = -1;
    for (const auto* g : {&ann[i].rgb_gt, &ann[i].thermal_gt}) {
      if (!g->has_value()) continue;
      best_d = std::min(best_d, oracle_dist(pred[i], **g));
      best_o = std::max(best_o, oracle_iou(pred[i], **g));
    }
    mpr += best_d < tau;
    mov.push_back(best_o);
  }
  auto success = [&](const std::vector<double>& o) {
    double acc = 0;
    for (int k = 0; k <= 20; ++k) {
      const double t = k / 20.0;
      double hits = 0;
      for (double x : o) hits += x > t;
      acc += hits / n;
    }
    return acc / 21.0;
  };
  return {pr / n, success(ov), mpr / n, success(mov)};
}

struct Fixture {
  std::string name;
  std::vector<BoundingBox> pred;
  std::vector<FrameAnnotation> ann;
  // Hand-derived expectations checked in addition to the oracle; NaN skips.
  double pr = NAN, sr = NAN, mpr = NAN, msr = NAN;
};

BoundingBox xywh(double x, double y, double w, double h) { return BoundingBox::from_xywh(x, y, w, h); }

FrameAnnotation both(const BoundingBox& b) { return {b, b, true}; }

std::vector<Fixture> fixtures() {
  const auto g = xywh(40, 40, 20, 20);
  std::vector<Fixture> f;
  // Perfect track: IoU 1 exceeds 20 of the 21 thresholds.
  f.push_back({"perfect", {g, g, g, g, g}, {both(g), both(g), both(g), both(g), both(g)}, 1.0, 20.0 / 21, 1.0, 20.0 / 21});
  // Errors 5, 25, 10 on three valid frames; two frames invalid.
  {
    Fixture x{"pr two thirds", {}, {}};
    const double dx[5] = {5, 0, 25, 0, 10};
    for (int i = 0; i < 5; ++i) {
      x.pred.push_back(xywh(40 + dx[i], 40, 20, 20));
      x.ann.push_back(both(g));
      x.ann.back().valid = i % 2 == 0;
    }
    x.pr = 2.0 / 3;
    x.mpr = 2.0 / 3;
    f.push_back(x);
  }
  // Unit squares offset by one pixel on both axes: IoU 1/7 on every frame,
  // above thresholds 0, 0.05 and 0.1.
  {
    Fixture x{"iou one seventh", {}, {}};
    for (int i = 0; i < 5; ++i) {
      x.pred.push_back(xywh(10 + i, 10, 2, 2));
      x.ann.push_back(both(xywh(11 + i, 11, 2, 2)));
    }
    x.sr = 3.0 / 21;
    x.pr = 1.0;
    f.push_back(x);
  }
  // Thermal annotation closer than the RGB one: MPR 1, PR 0.
  {
    Fixture x{"max over modalities", {}, {}};
    for (int i = 0; i < 5; ++i) {
      x.pred.push_back(xywh(100, 100, 20, 20));
      x.ann.push_back({xywh(40, 40, 20, 20), xywh(102, 101, 20, 20), true});
    }
    x.pr = 0.0;
    x.mpr = 1.0;
    f.push_back(x);
  }
  // Only thermal annotations: the thermal box is primary.
  {
    Fixture x{"thermal only", {}, {}};
    for (int i = 0; i < 5; ++i) {
      x.pred.push_back(xywh(40 + 6 * i, 40, 20, 20));
      x.ann.push_back({std::nullopt, g, true});
    }
    x.pr = 4.0 / 5;  // errors 0, 6, 12, 18, 24
    f.push_back(x);
  }
  // Error exactly at tau is not precise.
  {
    Fixture x{"tau boundary", {}, {}};
    for (int i = 0; i < 5; ++i) {
      x.pred.push_back(xywh(40 + (i < 2 ? 20 : 19.5), 40, 20, 20));
      x.ann.push_back(both(g));
    }
    x.pr = 3.0 / 5;
    f.push_back(x);
  }
  // IoU exactly 0.5 is above 10 thresholds.
  {
    Fixture x{"iou one half", {}, {}};
    for (int i = 0; i < 5; ++i) {
      x.pred.push_back(xywh(0, 0, 20, 10));
      x.ann.push_back(both(xywh(0, 0, 10, 10)));
    }
    x.sr = 10.0 / 21;
    f.push_back(x);
  }
  // Disjoint boxes everywhere.
  {
    Fixture x{"lost", {}, {}};
    for (int i = 0; i < 5; ++i) {
      x.pred.push_back(xywh(200, 200, 10, 10));
      x.ann.push_back(both(g));
    }
    x.pr = 0;
    x.sr = 0;
    x.mpr = 0;
    x.msr = 0;
    f.push_back(x);
  }
  // Mixed sizes and partially missing modalities.
  {
    Fixture x{"mixed", {}, {}};
    const BoundingBox p[5] = {xywh(10, 10, 30, 20), xywh(50, 12, 8, 8), xywh(33.3, 47.1, 12.5, 19.25),
                              xywh(0, 0, 64, 64), xywh(70, 70, 3, 40)};
    for (int i = 0; i < 5; ++i) x.pred.push_back(p[i]);
    x.ann = {{xywh(12, 9, 28, 22), std::nullopt, true},
             {std::nullopt, xywh(48, 15, 10, 7), true},
             {xywh(30, 45, 14, 20), xywh(34, 48, 12, 18), true},
             {xywh(10, 10, 20, 20), xywh(16, 16, 40, 40), false},
             {xywh(65, 80, 10, 10), xywh(71, 72, 4, 36), true}};
    f.push_back(x);
  }
  // Partial overlaps with a ramp of offsets.
  {
    Fixture x{"ramp", {}, {}};
    for (int i = 0; i < 5; ++i) {
      x.pred.push_back(xywh(40 + 3.5 * i, 40 - 2.0 * i, 20 + i, 20));
      x.ann.push_back({g, xywh(41, 39, 22, 18), true});
    }
    f.push_back(x);
  }
  return f;
}

Outcome criterion_metrics() {
  const auto fx = fixtures();
  std::size_t failures = 0;
  std::string first_failure;
  auto expect = [&](const std::string& what, double got, double want) {
    if (std::isnan(want) || got == want || std::abs(got - want) <= 1e-15) return;
    if (failures++ == 0) first_failure = what + " got " + fmt("%.17g", got) + " want " + fmt("%.17g", want);
  };
  for (const auto& x : fx) {
    const auto got = evaluate(x.pred, x.ann, 20.0);
    const auto want = oracle(x.pred, x.ann, 20.0);
    expect(x.name + " pr", got.pr, want.pr);
    expect(x.name + " sr", got.sr, want.sr);
    expect(x.name + " mpr", got.mpr, want.mpr);
    expect(x.name + " msr", got.msr, want.msr);
    expect(x.name + " pr (hand)", got.pr, x.pr);
    expect(x.name + " sr (hand)", got.sr, x.sr);
    expect(x.name + " mpr (hand)", got.mpr, x.mpr);
    expect(x.name + " msr (hand)", got.msr, x.msr);
  }
  expect("iou 1/7", iou(xywh(0, 0, 2, 2), xywh(1, 1, 2, 2)), 1.0 / 7);
  return {failures == 0 && fx.size() == 10,
          std::to_string(fx.size()) + " fixtures, " + std::to_string(failures) + " mismatches" +
              (first_failure.empty() ? "" : " (" + first_failure + ")")};
}

// ---------------------------------------------------------------------------
// 5 and 6. Trained arms. The dual-selection arm is shared.

RunConfig desk_config() {
  RunConfig c = load_config(FUSETRACK_SOURCE_DIR "/configs/desk.cfg");
  c.eval.held_out.sequences = kHeldOutSequences;
  c.eval.held_out.kind = Degradation::noise;
  c.validate();
  return c;
}

const ArmResult* find_arm(const std::vector<ArmResult>& arms, const std::string& name) {
  for (const auto& a : arms)
    if (a.name == name) return &a;
  return nullptr;
}

double arm_seconds(const std::vector<ArmResult>& arms, std::initializer_list<const char*> names) {
  double s = 0;
  for (auto* n : names)
    if (const auto* a = find_arm(arms, n)) s += a->train_seconds;
  return s;
}

void write_csv(const std::string& dir, const std::string& name, const RunConfig& cfg,
               const std::vector<ArmResult>& rows) {
  if (dir.empty()) return;
  std::string csv = config_provenance(cfg) + ablation_csv_header() + "\n";
  for (const auto& r : rows) csv += ablation_csv_row(r) + "\n";
  std::filesystem::create_directories(dir);
  write_text_file((std::filesystem::path(dir) / name).string(), csv);
}

void progress(const std::string& arm, const TrainCurveRow& r) {
  if (r.step % 250 == 0) std::fprintf(stderr, "  [%s] step %zu total %.4f\n", arm.c_str(), r.step, r.total);
}

Outcome criterion_selection(const RunConfig& cfg, std::vector<ArmResult>& cache, const std::string& csv_dir,
                            double& seconds) {
  const auto rows = run_ablation(AblationKind::heads, cfg, cache, progress);
  write_csv(csv_dir, "ablation_heads.csv", cfg, rows);
  seconds = arm_seconds(rows, {"dual_selection", "rgb_only", "thermal_only", "concat"});
  const auto* dual = find_arm(rows, "dual_selection");
  bool ok = dual != nullptr && dual->degraded_frames > 0 && dual->selection_rate >= kSelectionRate;
  std::string detail = "selection " + fmt("%.3f", dual ? dual->selection_rate : 0.0) + " >= " +
                       fmt("%.2f", kSelectionRate) + " over " + std::to_string(dual ? dual->degraded_frames : 0) +
                       " degraded frames; SR dual " + fmt("%.4f", dual ? dual->report.sr : 0.0);
  for (const auto& r : rows) {
    if (r.name == "dual_selection") continue;
    ok = ok && dual->report.sr >= r.report.sr;
    detail += " vs " + r.name + " " + fmt("%.4f", r.report.sr);
  }
  return {ok, detail};
}

Outcome criterion_embedding(const RunConfig& cfg, std::vector<ArmResult>& cache, const std::string& csv_dir,
                            double& seconds) {
  const auto rows = run_ablation(AblationKind::embedding, cfg, cache, progress);
  write_csv(csv_dir, "ablation_embedding.csv", cfg, rows);
  seconds = arm_seconds(rows, {"dual_selection", "single_embedding"});
  const auto* dual = find_arm(rows, "dual_selection");
  const auto* single = find_arm(rows, "single_embedding");
  const bool ok = dual && single && dual->report.sr >= single->report.sr &&
                  dual->parameter_count > single->parameter_count;
  return {ok, "SR dual embedding " + fmt("%.4f", dual ? dual->report.sr : 0.0) + " >= single " +
                  fmt("%.4f", single ? single->report.sr : 0.0) + (csv_dir.empty() ? "" : "; CSV in " + csv_dir)};
}

// ---------------------------------------------------------------------------
// 7. Latency ordering.

Outcome criterion_latency(const RunConfig& cfg, const std::string& csv_dir) {
  std::string csv = latency_csv_header() + "\n";
  bool ok = true;
  std::string detail = "three-stage/unified ratio";
  for (std::size_t dim : {32, 64, 128}) {
    ModelConfig m = cfg.model;
    m.embedding.dim = dim;
    const auto row = measure_latency(m, kLatencyWarmup, kLatencySamples, 4206);
    csv += latency_csv_row(row) + "\n";
    ok = ok && row.unified_ms < row.three_stage_ms && row.samples >= 30 &&
         row.search_tokens == 4 * row.template_tokens;
    detail += " D=" + std::to_string(dim) + ": " + fmt("%.3f", row.ratio()) + " (" + fmt("%.2f", row.unified_ms) +
              " vs " + fmt("%.2f", row.three_stage_ms) + " ms)";
  }
  if (!csv_dir.empty()) {
    std::filesystem::create_directories(csv_dir);
    write_text_file((std::filesystem::path(csv_dir) / "latency.csv").string(), config_provenance(cfg) + csv);
  }
  return {ok, detail + "; pass needs every ratio > 1"};
}

// ---------------------------------------------------------------------------
// 8. Determinism and persistence.

std::vector<double> flat_state(const TrackerModel& m) {
  std::vector<double> v;
  for (const auto& [name, t] : m.state()) v.insert(v.end(), t.data().begin(), t.data().end());
  return v;
}

Outcome criterion_determinism(const RunConfig& desk) {
  RunConfig cfg = desk;
  cfg.train.steps = 12;
  auto train_once = [&](std::vector<TrainCurveRow>& curve) {
    auto model = make_model(cfg);
    auto source = make_training_source(cfg);
    Trainer trainer(model, cfg.train);
    curve = trainer.run(source);
    return model;
  };
  std::vector<TrainCurveRow> c1, c2;
  auto m1 = train_once(c1);
  auto m2 = train_once(c2);
  bool curves_equal = c1.size() == c2.size();
  for (std::size_t i = 0; curves_equal && i < c1.size(); ++i)
    curves_equal = c1[i].total == c2[i].total && c1[i].l_rgb == c2[i].l_rgb && c1[i].l_t == c2[i].l_t &&
                   c1[i].lambda_rgb == c2[i].lambda_rgb;
  const bool state_equal = flat_state(m1) == flat_state(m2);

  ScenarioSpec spec = cfg.data.scene;
  spec.seed = 77;
  spec.num_frames = 40;
  spec.spans = {{Modality::rgb, Degradation::noise, 10, 25}};
  const auto scenario = make_scenario(spec);
  auto track = [&](TrackerModel& m) {
    const auto outs = track_sequence(
        m, [&](std::size_t t) { return render_frame(scenario, t); }, spec.num_frames, scenario.boxes[0],
        cfg.track_options());
    return format_result_file(make_result_file(outs, ""));
  };
  const auto r1 = track(m1);
  const bool tracks_equal = r1 == track(m2);

  const auto path = (std::filesystem::temp_directory_path() / "fusetrack_acceptance_ckpt.bin").string();
  save_checkpoint(path, make_checkpoint(m1));
  auto restored = model_from_checkpoint(load_checkpoint(path));
  std::filesystem::remove(path);
  const bool roundtrip_equal = track(restored) == r1 && flat_state(restored) == flat_state(m1);

  const bool ok = curves_equal && state_equal && tracks_equal && roundtrip_equal;
  auto yn = [](bool b) { return b ? "identical" : "DIFFERENT"; };
  return {ok, std::string("curves ") + yn(curves_equal) + ", weights " + yn(state_equal) + ", tracks " +
                  yn(tracks_equal) + ", checkpoint round-trip " + yn(roundtrip_equal)};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  std::string csv_dir;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      for (std::string tok; std::getline(ss, tok, ',');) only.insert(std::stoi(tok));
    } else if (a == "--csv-dir" && i + 1 < argc) {
      csv_dir = argv[++i];
    } else {
      std::fprintf(stderr, "usage: %s [--only N[,N...]] [--csv-dir DIR]\n", argv[0]);
      return 2;
    }
  }
  auto wanted = [&](int id) { return only.empty() || only.count(id) > 0; };

  std::vector<Line> lines;
  auto timed = [&](int id, const std::string& name, double budget, const std::function<Outcome()>& fn) {
    if (!wanted(id)) return;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    lines.push_back({id, name, o, seconds_since(t0), budget});
    const auto& l = lines.back();
    std::printf("criterion %d %s  %s: %s [%.1f s]\n", id, l.outcome.passed ? "PASS" : "FAIL", name.c_str(),
                l.outcome.detail.c_str(), l.seconds);
    std::fflush(stdout);
  };

  timed(1, "block reconstruction", kBudget1, criterion_reconstruction);
  timed(2, "finite-difference gradients", kBudget2, criterion_gradients);
  timed(3, "adaptive loss weights", kBudget3, criterion_weighting);
  timed(4, "metric oracle", kBudget4, criterion_metrics);

  std::vector<ArmResult> cache;
  double arms5 = 0, arms6 = 0;
  if (wanted(5) || wanted(6) || wanted(7) || wanted(8)) {
    RunConfig desk;
    try {
      desk = desk_config();
    } catch (const std::exception& e) {
      std::printf("cannot load desk config: %s\n", e.what());
      return 1;
    }
    timed(5, "selection efficacy", kBudget5, [&] { return criterion_selection(desk, cache, csv_dir, arms5); });
    timed(6, "dual vs single embedding", kBudget6, [&] { return criterion_embedding(desk, cache, csv_dir, arms6); });
    timed(7, "latency ordering", kBudget7, [&] { return criterion_latency(desk, csv_dir); });
    timed(8, "determinism and persistence", 0, [&] { return criterion_determinism(desk); });
  }

  // Runtime budgets. Criteria 5 and 6 share the dual-selection arm, so each
  // is charged the training time of all of its arms plus its evaluation.
  std::printf("\nruntime budgets\n");
  bool all = true;
  for (auto& l : lines) {
    double charged = l.seconds;
    if (l.id == 5) charged = std::max(l.seconds, arms5);
    if (l.id == 6) charged = std::max(l.seconds, arms6);
    const bool in_budget = l.budget <= 0 || charged < l.budget;
    if (!in_budget) l.outcome.passed = false;
    all = all && l.outcome.passed;
    if (l.budget > 0)
      std::printf("  criterion %d: %.1f s of %.0f s %s\n", l.id, charged, l.budget, in_budget ? "ok" : "EXCEEDED");
  }
  std::printf("\nsummary\n");
  for (const auto& l : lines) std::printf("criterion %d %s  %s\n", l.id, l.outcome.passed ? "PASS" : "FAIL", l.name.c_str());
  return all ? 0 : 1;
}
