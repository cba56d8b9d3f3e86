// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include "doctest.h"
#include "fusetrack/gradcheck.hpp"
#include "fusetrack/heads.hpp"
#include "fusetrack/losses.hpp"

using namespace fusetrack;

namespace {

// Maps that encode `box` exactly: Gaussian score peak at the center cell,
// offset equal to the fractional position and size equal to the box size.
PredictionMaps encode(const BoundingBox& box, std::size_t side) {
  auto target = gaussian_target(box, side);
  const auto n = side * side;
  std::vector<double> score(n), offset(2 * n), size(2 * n);
  for (std::size_t c = 0; c < n; ++c) {
    score[c] = std::clamp(target[c], 0.01, 0.99);
    offset[2 * c] = box.cx * side - static_cast<double>(c % side);
    offset[2 * c + 1] = box.cy * side - static_cast<double>(c / side);
    size[2 * c] = box.w;
    size[2 * c + 1] = box.h;
  }
  return make_prediction_maps(side, score, offset, size);
}

}  // namespace

TEST_CASE("center head shapes and ranges") {
  Rng rng(1);
  auto head = CenterHead::random(16, 8, rng);
  auto feats = rng.normal_tensor({2 * 64, 16}, 1.0);
  for (bool training : {true, false}) {
    auto maps = center_head_forward(feats, head, 2, training);
    CHECK(maps.side == 8);
    CHECK(maps.score.shape() == Shape{128, 1});
    CHECK(maps.offset.shape() == Shape{128, 2});
    CHECK(maps.size.shape() == Shape{128, 2});
    for (double v : maps.score.data()) CHECK((v > 0.0 && v < 1.0));
    for (double v : maps.size.data()) CHECK(v > 0.0);
  }
  CHECK_THROWS_AS(center_head_forward(rng.normal_tensor({10, 16}, 1.0), head, 1, false), ShapeError);
}

TEST_CASE("center head gradients match finite differences") {
  Rng rng(2);
  auto head = CenterHead::random(6, 8, rng);
  auto feats = rng.normal_tensor({2 * 9, 6}, 1.0, true);
  auto ws = rng.uniform_tensor({18, 1}, -1, 1), wo = rng.uniform_tensor({18, 2}, -1, 1),
       wz = rng.uniform_tensor({18, 2}, -1, 1);
  // Score logits start near -2.19 so the clamp band is not active.
  auto r = check_gradients(
      [&] {
        auto m = center_head_forward(feats, head, 2, true);
        return add(add(sum(mul(m.score, ws)), sum(mul(m.offset, wo))), sum(mul(m.size, wz)));
      },
      {feats, head.score.stages[0].weight, head.offset.stages[1].gamma, head.size.output.weight,
       head.score.output.bias});
  CHECK(r.max_relative_error < 1e-4);
}

TEST_CASE("decode examples") {
  const std::size_t s = 8;
  std::vector<double> score(64, 0.1), offset(128, 0.5), size(128, 0.25);
  score[2 * 8 + 3] = 0.9;
  auto box = decode_box(make_prediction_maps(s, score, offset, size));
  CHECK(box.cx == doctest::Approx(0.4375).epsilon(1e-15));
  CHECK(box.cy == doctest::Approx(0.3125).epsilon(1e-15));
  CHECK(box.w == 0.25);
  CHECK(box.h == 0.25);

  auto uniform = decode_box(make_prediction_maps(s, std::vector<double>(64, 0.3), offset, size));
  CHECK(uniform.cx == doctest::Approx(0.5 / 8));
  CHECK(uniform.cy == doctest::Approx(0.5 / 8));
}

TEST_CASE("decode ignores constant logit shifts") {
  Rng rng(3);
  auto logits = rng.uniform_tensor({64, 1}, -3, 3);
  std::vector<double> offset(128, 0.3), size(128, 0.2);
  auto decode_with = [&](double shift) {
    auto sc = sigmoid(add_scalar(logits, shift));
    return decode_box(make_prediction_maps(8, {sc.data().begin(), sc.data().end()}, offset, size));
  };
  CHECK(decode_with(0.0) == decode_with(1.7));
  CHECK(decode_with(0.0) == decode_with(-2.5));
}

TEST_CASE("decode recovers planted boxes") {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t side = 4 + rng.uniform_index(8);
    BoundingBox box{rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.5), rng.uniform(0.05, 0.5)};
    auto got = decode_box(encode(box, side));
    CHECK(std::abs(got.cx - box.cx) <= 1.0 / side);
    CHECK(std::abs(got.cy - box.cy) <= 1.0 / side);
    CHECK(got.w == doctest::Approx(box.w));
  }
}

TEST_CASE("hanning window is symmetric, positive and peaks at the center") {
  auto w = hanning_window(5);
  CHECK(w[2 * 5 + 2] == doctest::Approx(1.0));
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j) {
      CHECK(w[i * 5 + j] > 0.0);
      CHECK(w[i * 5 + j] == doctest::Approx(w[j * 5 + i]));
      CHECK(w[i * 5 + j] == doctest::Approx(w[(4 - i) * 5 + j]));
    }
  // The window pulls the argmax toward the center on a flat map.
  std::vector<double> score(25, 0.5), offset(50, 0.5), size(50, 0.2);
  auto box = decode_box(make_prediction_maps(5, score, offset, size), 0, &w);
  CHECK(box.cx == doctest::Approx(0.5));
}

TEST_CASE("reliability head") {
  Rng rng(5);
  auto head = ReliabilityHead::random(8, 8, rng);
  auto a = rng.normal_tensor({2 * 16, 8}, 1.0, true), b = rng.normal_tensor({2 * 16, 8}, 1.0);
  auto ra = reliability_forward(a, head, 2, false), rb = reliability_forward(b, head, 2, false);
  CHECK(ra.shape() == Shape{2, 1});
  CHECK(std::isfinite(ra[0]));
  CHECK(ra[0] != rb[0]);
  // Batch statistics over two 1x1 maps are degenerate, so the gradient check uses a wider batch.
  auto c = rng.normal_tensor({4 * 64, 8}, 1.0, true);
  auto w = Tensor::from({4, 1}, {0.7, -1.3, 0.4, 1.1});
  for (bool training : {true, false}) {
    CAPTURE(training);
    auto r = check_gradients([&] { return sum(mul(reliability_forward(c, head, 4, training), w)); },
                             {c, head.stages[0].weight, head.stages[2].beta, head.fc_weight, head.fc_bias});
    CHECK(r.max_relative_error < 1e-4);
  }
}

TEST_CASE("reliability weights") {
  auto [a, b] = reliability_weights(0.0, 0.0);
  CHECK(a == 0.5);
  CHECK(b == 0.5);
  auto [c, d] = reliability_weights(1.0, 0.0);
  // logistic(1) = 1 / (1 + e^-1)
  CHECK(std::abs(c - 0.73106) < 1e-5);
  CHECK(std::abs(d - 0.26894) < 1e-5);
  CHECK_THROWS_AS(reliability_weights(NAN, 0.0), DomainError);

  Rng rng(6);
  for (int i = 0; i < 1000; ++i) {
    const double x = rng.uniform(-50, 50), y = rng.uniform(-50, 50), shift = rng.uniform(-100, 100);
    auto [l1, l2] = reliability_weights(x, y);
    CHECK(std::abs(l1 + l2 - 1.0) <= 1e-15);
    CHECK(l1 > 0.0);
    CHECK(l2 > 0.0);
    auto [s1, s2] = reliability_weights(x + shift, y + shift);
    CHECK(std::abs(s1 - l1) < 1e-9);
  }
}

TEST_CASE("select output") {
  const BoundingBox rb{0.1, 0.2, 0.3, 0.4}, tb{0.5, 0.6, 0.2, 0.1};
  auto out = select_output(rb, tb, make_reliability(2.0, 1.0));
  CHECK(out.chosen == Modality::rgb);
  CHECK(out.box == rb);
  CHECK(select_output(rb, tb, make_reliability(1.0, 1.0)).chosen == Modality::rgb);
  auto t = select_output(rb, tb, make_reliability(-1.0, 3.0));
  CHECK(t.chosen == Modality::thermal);
  CHECK(t.box == tb);
  CHECK(t.both_boxes[0] == rb);
  CHECK(t.both_boxes[1] == tb);

  Rng rng(7);
  for (int i = 0; i < 500; ++i) {
    const double x = rng.uniform(-5, 5), y = rng.uniform(-5, 5), c = rng.uniform(-10, 10);
    const auto base = select_output(rb, tb, make_reliability(x, y)).chosen;
    CHECK(select_output(rb, tb, make_reliability(x + c, y + c)).chosen == base);
    CHECK(select_output(rb, tb, make_reliability(std::exp(x), std::exp(y))).chosen == base);
    CHECK(base == (x >= y ? Modality::rgb : Modality::thermal));
  }
}

TEST_CASE("dual heads with swapped inputs and parameters swap outputs") {
  Rng rng(8);
  auto ha = CenterHead::random(8, 8, rng), hb = CenterHead::random(8, 8, rng);
  auto fa = rng.normal_tensor({16, 8}, 1.0), fb = rng.normal_tensor({16, 8}, 1.0);
  auto a1 = center_head_forward(fa, ha, 1, false), b1 = center_head_forward(fb, hb, 1, false);
  auto a2 = center_head_forward(fb, hb, 1, false), b2 = center_head_forward(fa, ha, 1, false);
  CHECK(std::equal(a1.score.data().begin(), a1.score.data().end(), b2.score.data().begin()));
  CHECK(std::equal(b1.size.data().begin(), b1.size.data().end(), a2.size.data().begin()));
  ParameterSet ps;
  ha.register_parameters(ps, "a.");
  hb.register_parameters(ps, "b.");
  CHECK(ps.size() % 2 == 0);
}
