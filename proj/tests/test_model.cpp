// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include "doctest.h"
#include "fusetrack/model.hpp"
#include "test_support.hpp"

using namespace fusetrack;
using namespace fusetrack::testing;

namespace {

struct Inputs {
  std::vector<ImagePair> z, x;
};

Inputs inputs(std::size_t batch, std::uint64_t seed) {
  Rng rng(seed);
  Inputs in;
  for (std::size_t b = 0; b < batch; ++b) {
    in.z.push_back(random_pair(32, rng));
    in.x.push_back(random_pair(64, rng));
  }
  return in;
}

}  // namespace

TEST_CASE("output shapes per head variant") {
  const auto in = inputs(3, 1);
  for (auto v : {HeadVariant::dual_selection, HeadVariant::rgb_only, HeadVariant::thermal_only, HeadVariant::concat}) {
    auto m = TrackerModel::create(tiny_model(v), 2);
    const auto out = m.forward(in.z, in.x, false);
    CHECK(out.batch == 3);
    CHECK(out.maps.size() == (v == HeadVariant::dual_selection ? 2u : 1u));
    for (const auto& maps : out.maps) {
      CHECK(maps.side == 8);
      CHECK(maps.score.shape() == Shape{3 * 64, 1});
      CHECK(maps.offset.shape() == Shape{3 * 64, 2});
      CHECK(maps.size.shape() == Shape{3 * 64, 2});
      for (double s : maps.score.data()) {
        CHECK(s >= 1e-4);
        CHECK(s <= 1 - 1e-4);
      }
    }
    if (v == HeadVariant::dual_selection) {
      CHECK(out.r_rgb.shape() == Shape{3, 1});
      CHECK(out.r_t.shape() == Shape{3, 1});
    }
  }
}

TEST_CASE("single embedding shares one projection") {
  auto dual_cfg = tiny_model();
  auto single_cfg = dual_cfg;
  single_cfg.embedding.dual = false;
  const auto dual = TrackerModel::create(dual_cfg, 3);
  const auto single = TrackerModel::create(single_cfg, 3);
  CHECK(dual.embedding.dual());
  CHECK_FALSE(single.embedding.dual());
  const std::size_t proj = 3 * 8 * 8 * 16;
  CHECK(dual.parameters().element_count() - single.parameters().element_count() == proj);
}

TEST_CASE("creation is deterministic and batch rows are independent") {
  const auto in = inputs(2, 4);
  auto a = TrackerModel::create(tiny_model(), 5);
  auto b = TrackerModel::create(tiny_model(), 5);
  const auto oa = a.forward(in.z, in.x, false);
  const auto ob = b.forward(in.z, in.x, false);
  CHECK(same_values(oa.maps[0].score, ob.maps[0].score));
  CHECK(same_values(oa.r_t, ob.r_t));

  // Row 1 of the batch equals a batch-of-one run on that sample.
  const auto one = a.forward(std::span(&in.z[1], 1), std::span(&in.x[1], 1), false);
  for (std::size_t i = 0; i < 64; ++i) CHECK(one.maps[1].score[i] == doctest::Approx(oa.maps[1].score[64 + i]).epsilon(1e-12));
  CHECK(one.r_rgb[0] == doctest::Approx(oa.r_rgb[1]).epsilon(1e-12));
}

TEST_CASE("inference chooses the modality with the higher reliability") {
  const auto in = inputs(6, 6);
  auto m = TrackerModel::create(tiny_model(), 7);
  for (std::size_t i = 0; i < 6; ++i) {
    const auto o = m.infer(in.z[i], in.x[i]);
    const auto expected = o.reliability.r_t > o.reliability.r_rgb ? Modality::thermal : Modality::rgb;
    CHECK(o.chosen == expected);
    const auto& chosen = o.both_boxes[static_cast<int>(o.chosen)];
    CHECK(o.box.cx == chosen.cx);
    CHECK(o.reliability.lambda_rgb + o.reliability.lambda_t == doctest::Approx(1.0).epsilon(1e-15));
  }
}

TEST_CASE("detached reliability features stop gradient into the backbone") {
  const auto in = inputs(2, 8);
  for (bool flow : {true, false}) {
    auto cfg = tiny_model();
    cfg.reliability_grad_to_backbone = flow;
    auto m = TrackerModel::create(cfg, 9);
    auto params = m.parameters();
    for (auto& p : params.items()) {
      p.value.set_requires_grad(true);
      p.value.clear_grad();
    }
    {
      Tape tape;
      RecordingScope scope(tape);
      const auto out = m.forward(in.z, in.x, true);
      tape.backward(sum(out.r_rgb));
    }
    double backbone_grad = 0.0;
    for (const auto& p : params.items()) {
      if (p.group != ParamGroup::backbone || !p.value.has_grad()) continue;
      for (double g : p.value.grad()) backbone_grad += std::abs(g);
    }
    if (flow) {
      CHECK(backbone_grad > 0.0);
    } else {
      CHECK(backbone_grad == 0.0);
    }
  }
}

TEST_CASE("invalid configurations are rejected") {
  auto c = tiny_model();
  c.heads = 3;
  CHECK_THROWS_AS(TrackerModel::create(c, 1), ShapeError);
  c = tiny_model();
  c.embedding.patch = 6;
  CHECK_THROWS_AS(TrackerModel::create(c, 1), ShapeError);
  c = tiny_model();
  c.depth = 0;
  CHECK_THROWS_AS(TrackerModel::create(c, 1), ContractError);
  CHECK_THROWS_AS(parse_variant("triple"), ContractError);
  CHECK(parse_variant("concat") == HeadVariant::concat);
}
