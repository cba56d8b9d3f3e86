// SPDX-License-Identifier: Apache-2.0

#include "fusetrack/selftest.hpp"

#include <cmath>
#include <cstdio>

#include "fusetrack/backbone.hpp"
#include "fusetrack/gradcheck.hpp"
#include "fusetrack/losses.hpp"
#include "fusetrack/metrics.hpp"
#include "fusetrack/model.hpp"
#include "fusetrack/train.hpp"

namespace fusetrack {

namespace {

constexpr double kGradTol = 1e-4;
constexpr double kReconstructionTol = 1e-10;

class Suite {
 public:
  void below(const std::string& name, double value, double tol, std::string detail = {}) {
    out_.push_back({name, std::isfinite(value) && value < tol, value, tol, std::move(detail)});
  }
  void within(const std::string& name, double value, double tol, std::string detail = {}) {
    out_.push_back({name, std::isfinite(value) && value <= tol, value, tol, std::move(detail)});
  }
  void run(const std::string& name, double tol, const std::function<double()>& fn) {
    try {
      below(name, fn(), tol);
    } catch (const std::exception& e) {
      out_.push_back({name, false, NAN, tol, std::string("threw: ") + e.what()});
    }
  }
  std::vector<CheckResult> take() { return std::move(out_); }

 private:
  std::vector<CheckResult> out_;
};

Tensor probe(const Tensor& y, const Tensor& w) { return sum(mul(y, w)); }

double grad_error(const std::function<Tensor()>& fn, std::vector<Tensor> inputs) {
  return check_gradients(fn, std::move(inputs)).max_relative_error;
}

void op_gradients(Suite& s) {
  Rng rng(101);
  const std::size_t m = 4, n = 5;
  auto a = rng.uniform_tensor({m, n}, -1, 1, true), b = rng.uniform_tensor({m, n}, -1, 1, true);
  auto w = rng.uniform_tensor({m, n}, -1, 1);
  auto rhs = rng.uniform_tensor({n, 3}, -1, 1, true);
  auto w3 = rng.uniform_tensor({m, 3}, -1, 1);
  auto v = rng.uniform_tensor({n}, -1, 1, true);
  auto gain = rng.uniform_tensor({n}, 0.5, 1.5, true), bias = rng.uniform_tensor({n}, -0.5, 0.5, true);
  auto block = rng.uniform_tensor({2, n}, -1, 1, true);
  auto wp = rng.uniform_tensor({2, n}, -1, 1);
  auto wg = rng.uniform_tensor({3, n}, -1, 1);

  s.run("grad matmul", kGradTol, [&] { return grad_error([&] { return probe(matmul(a, rhs), w3); }, {a, rhs}); });
  s.run("grad add", kGradTol, [&] { return grad_error([&] { return probe(add(a, b), w); }, {a, b}); });
  s.run("grad sub", kGradTol, [&] { return grad_error([&] { return probe(sub(a, b), w); }, {a, b}); });
  s.run("grad mul", kGradTol, [&] { return grad_error([&] { return probe(mul(a, b), w); }, {a, b}); });
  s.run("grad scale/add_scalar", kGradTol,
        [&] { return grad_error([&] { return probe(scale(add_scalar(a, 0.3), -1.7), w); }, {a}); });
  s.run("grad add_row", kGradTol, [&] { return grad_error([&] { return probe(add_row(a, v), w); }, {a, v}); });
  s.run("grad add_tiled", kGradTol,
        [&] { return grad_error([&] { return probe(add_tiled(a, block), w); }, {a, block}); });
  s.run("grad sum/mean", kGradTol, [&] { return grad_error([&] { return add(sum(a), mean(mul(a, a))); }, {a}); });
  s.run("grad softmax_rows", kGradTol,
        [&] { return grad_error([&] { return probe(softmax_rows(scale(a, 3.0)), w); }, {a}); });
  s.run("grad layer_norm", kGradTol, [&] {
    return grad_error([&] { return probe(layer_norm(a, gain, bias, 1e-5), w); }, {a, gain, bias});
  });
  s.run("grad gelu", kGradTol, [&] { return grad_error([&] { return probe(gelu(scale(a, 3.0)), w); }, {a}); });
  s.run("grad relu", kGradTol, [&] { return grad_error([&] { return probe(relu(a), w); }, {a}); });
  s.run("grad sigmoid", kGradTol, [&] { return grad_error([&] { return probe(sigmoid(scale(a, 4.0)), w); }, {a}); });
  s.run("grad clamp", kGradTol, [&] { return grad_error([&] { return probe(clamp(a, -0.5, 0.5), w); }, {a}); });
  s.run("grad reshape", kGradTol,
        [&] { return grad_error([&] { return probe(reshape(a, {n, m}), reshape(w, {n, m})); }, {a}); });
  s.run("grad concat/slice rows", kGradTol, [&] {
    return grad_error([&] { return probe(slice_rows(concat_rows({a, b}), {2, 6}), concat_rows({w})); }, {a, b});
  });
  s.run("grad concat/slice cols", kGradTol, [&] {
    return grad_error([&] { return probe(slice_cols(concat_cols({a, b}), {3, 8}), w); }, {a, b});
  });
  s.run("grad gather_rows", kGradTol,
        [&] { return grad_error([&] { return probe(gather_rows(a, {m - 1, 0, m - 1}), wg); }, {a}); });
  s.run("grad mean_pool_rows", kGradTol,
        [&] { return grad_error([&] { return probe(mean_pool_rows(a, 2), wp); }, {a}); });

  const std::size_t batch = 2, tokens = 5, dim = 6, heads = 2;
  auto q = rng.uniform_tensor({batch * tokens, dim}, -1, 1, true);
  auto k = rng.uniform_tensor({batch * tokens, dim}, -1, 1, true);
  auto vv = rng.uniform_tensor({batch * tokens, dim}, -1, 1, true);
  auto wa = rng.uniform_tensor({batch * tokens, dim}, -1, 1);
  s.run("grad attention_core", kGradTol, [&] {
    return grad_error([&] { return probe(attention_core(q, k, vv, batch, heads), wa); }, {q, k, vv});
  });

  const std::size_t side = 4, c = 3;
  auto x = rng.uniform_tensor({batch * side * side, c}, -1, 1, true);
  for (std::size_t stride : {1u, 2u}) {
    const auto os = conv_out_side(side, stride);
    auto wi = rng.uniform_tensor({batch * os * os, 9 * c}, -1, 1);
    s.run("grad im2col3x3 stride " + std::to_string(stride), kGradTol,
          [&] { return grad_error([&] { return probe(im2col3x3(x, batch, side, stride), wi); }, {x}); });
  }
  auto gamma = rng.uniform_tensor({c}, 0.5, 1.5, true), beta = rng.uniform_tensor({c}, -0.5, 0.5, true);
  auto wb = rng.uniform_tensor({batch * side * side, c}, -1, 1);
  for (bool training : {true, false}) {
    BatchNormState st{Tensor::zeros({c}), Tensor::full({c}, 1.0)};
    s.run(std::string("grad batch_norm ") + (training ? "train" : "eval"), kGradTol, [&] {
      return grad_error([&] { return probe(batch_norm(x, gamma, beta, st, training), wb); }, {x, gamma, beta});
    });
  }
}

void model_gradient(Suite& s) {
  s.run("grad full model, 2 layers", kGradTol, [] {
    ModelConfig mc;
    mc.embedding = {8, 8, 32, 64, true};
    mc.depth = 2;
    mc.heads = 2;
    mc.head_channels = 8;
    mc.reliability_channels = 8;
    auto model = TrackerModel::create(mc, 5);
    Rng rng(6);
    // Larger attention weights than the init so the check sees non-uniform attention.
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
    std::vector<Tensor> inputs;
    const auto params = model.parameters();
    for (const auto& p : params.items())
      if (p.value.size() <= 16) inputs.push_back(p.value);
    inputs.push_back(model.backbone.layers[1].wq);
    const LossWeights weights;
    // The small step keeps the perturbation from crossing ReLU kinks in the
    // heads. Key biases and conv biases ahead of batch norm have exactly zero
    // gradient, so the error is measured over all inputs jointly.
    return check_gradients(
               [&] {
                 const auto out = model.forward(templates, searches, true);
                 return compute_loss(model, out, targets, weights).total;
               },
               inputs, 1e-6)
        .joint_relative_error;
  });
}

void decomposition(Suite& s, const SelftestOptions& options) {
  double worst = 0.0;
  Rng rng(202);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t heads = 1 + rng.uniform_index(4);
    const std::size_t dim = heads * (1 + rng.uniform_index(4));
    const std::size_t nx = 1 + rng.uniform_index(9), nz = 1 + rng.uniform_index(4);
    SegmentLayout layout({nx, nx, nz, nz});
    JointTokenState st{rng.uniform_tensor({layout.total(), dim}, -1, 1), layout, 1};
    auto p = EncoderLayerParams::random(dim, heads, rng);
    for (auto* t : {&p.wq, &p.wk, &p.wv}) *t = rng.uniform_tensor(t->shape(), -0.5, 0.5);
    const auto r = joint_attention(st, p);
    Tensor rec = reconstruct_from_blocks(r.decomposition, r.values);
    if (options.reconstruction_fault) rec = options.reconstruction_fault(rec);
    for (std::size_t i = 0; i < rec.size(); ++i) worst = std::max(worst, std::abs(rec[i] - r.output[i]));
  }
  s.below("attention block reconstruction, 20 configs", worst, kReconstructionTol);
}

void softmax_contracts(Suite& s) {
  Rng rng(303);
  auto a = rng.uniform_tensor({6, 7}, -20, 20);
  const auto p = softmax_rows(a), q = softmax_rows(add_scalar(a, 123.0));
  double row_err = 0.0, shift_err = 0.0;
  for (std::size_t i = 0; i < 6; ++i) {
    double total = 0.0;
    for (std::size_t j = 0; j < 7; ++j) {
      total += p.at(i, j);
      shift_err = std::max(shift_err, std::abs(p.at(i, j) - q.at(i, j)));
    }
    row_err = std::max(row_err, std::abs(total - 1.0));
  }
  s.below("softmax rows sum to one", row_err, 1e-12);
  s.below("softmax shift invariance", shift_err, 1e-12);

  double lambda_err = 0.0, bound_violation = 0.0;
  for (int i = 0; i < 200; ++i) {
    const double r1 = rng.uniform(-10, 10), r2 = rng.uniform(-10, 10);
    const double l1 = rng.uniform(0, 5), l2 = rng.uniform(0, 5);
    const auto t = total_loss(l1, l2, r1, r2);
    lambda_err = std::max(lambda_err, std::abs(t.lambda_rgb + t.lambda_t - 1.0));
    bound_violation = std::max({bound_violation, std::min(l1, l2) - t.total, t.total - std::max(l1, l2)});
  }
  s.within("loss weights sum to one", lambda_err, 1e-15);
  s.within("total loss between head losses", bound_violation, 0.0);
}

void metric_oracles(Suite& s) {
  const auto a = BoundingBox::from_xywh(0, 0, 2, 2), b = BoundingBox::from_xywh(1, 1, 2, 2);
  s.within("iou example", std::abs(iou(a, b) - 1.0 / 7.0), 1e-15);
  s.within("precision example", std::abs(precision_rate({5.0, 25.0, 10.0}) - 2.0 / 3.0), 1e-15);
  s.within("success of a perfect track", std::abs(success_rate({1.0, 1.0, 1.0}).sr - 20.0 / 21.0), 1e-15);
  const std::vector<BoundingBox> pred{BoundingBox::from_xywh(100, 100, 10, 10)};
  const std::vector<FrameAnnotation> ann{
      {BoundingBox::from_xywh(130, 100, 10, 10), BoundingBox::from_xywh(105, 100, 10, 10), true}};
  const auto r = evaluate(pred, ann);
  s.within("max precision takes the closer ground truth", std::abs(r.mpr - 1.0) + std::abs(r.pr - 0.0), 0.0);
}

}  // namespace

std::vector<CheckResult> run_selftest(const SelftestOptions& options) {
  Suite s;
  op_gradients(s);
  model_gradient(s);
  decomposition(s, options);
  softmax_contracts(s);
  metric_oracles(s);
  return s.take();
}

std::string format_check_table(const std::vector<CheckResult>& results) {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-46s %-4s %12s %10s\n", "check", "ok", "value", "tol");
  out += buf;
  for (const auto& r : results) {
    std::snprintf(buf, sizeof buf, "%-46s %-4s %12.3e %10.1e", r.name.c_str(), r.passed ? "pass" : "FAIL", r.value,
                  r.tolerance);
    out += buf;
    if (!r.detail.empty()) out += "  " + r.detail;
    out += "\n";
  }
  return out;
}

}  // namespace fusetrack
