// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <sstream>
#include <string>

#include "doctest.h"
#include "fusetrack/three_stage.hpp"
#include "test_support.hpp"

using namespace fusetrack;
using namespace fusetrack::testing;

namespace {

std::size_t count_fields(const std::string& line) {
  std::size_t n = 1;
  for (char c : line) n += c == ',';
  return n;
}

}  // namespace

TEST_CASE("outputs match the unified model's shapes") {
  auto cfg = tiny_model();
  cfg.depth = 4;
  auto unified = TrackerModel::create(cfg, 1);
  auto staged = ThreeStageModel::create(cfg, 1);
  Rng rng(2);
  std::vector<ImagePair> z{random_pair(32, rng), random_pair(32, rng)};
  std::vector<ImagePair> x{random_pair(64, rng), random_pair(64, rng)};
  const auto a = unified.forward(z, x, false);
  const auto b = three_stage_forward(staged, z, x);
  REQUIRE(a.maps.size() == b.maps.size());
  for (std::size_t i = 0; i < a.maps.size(); ++i) {
    CHECK(a.maps[i].score.shape() == b.maps[i].score.shape());
    CHECK(a.maps[i].offset.shape() == b.maps[i].offset.shape());
    CHECK(a.maps[i].size.shape() == b.maps[i].size.shape());
    CHECK(a.maps[i].side == b.maps[i].side);
  }
  CHECK(a.r_rgb.shape() == b.r_rgb.shape());
  CHECK(a.r_t.shape() == b.r_t.shape());
  for (double v : b.maps[0].score.data()) CHECK(std::isfinite(v));
  const auto again = three_stage_forward(staged, z, x);
  CHECK(same_values(b.maps[1].score, again.maps[1].score));
  CHECK(same_values(b.r_t, again.r_t));
}

TEST_CASE("layer accounting matches the unified depth") {
  for (std::size_t depth : {3, 4, 6}) {
    auto cfg = tiny_model();
    cfg.depth = depth;
    const auto m = ThreeStageModel::create(cfg, 1);
    CHECK(m.extract_rgb.size() == depth - 2);
    CHECK(m.extract_t.size() == depth - 2);
    CHECK(m.layers_per_token() == depth);
  }
  CHECK(ThreeStageModel::kPhases == 4);
  auto cfg = tiny_model();
  cfg.depth = 2;
  CHECK_THROWS_AS(ThreeStageModel::create(cfg, 1), ContractError);
}

TEST_CASE("latency report schema and stability") {
  auto cfg = tiny_model();
  cfg.depth = 4;
  const auto r1 = measure_latency(cfg, 10, 30, 3);
  const auto r2 = measure_latency(cfg, 10, 30, 3);
  CHECK(r1.warmup == 10);
  CHECK(r1.samples == 30);
  CHECK(r1.search_tokens == 4 * r1.template_tokens);
  CHECK(r1.unified_ms > 0.0);
  CHECK(r1.three_stage_ms > 0.0);
  CHECK(r1.ratio() == doctest::Approx(r1.three_stage_ms / r1.unified_ms));
  CHECK(count_fields(latency_csv_header()) == count_fields(latency_csv_row(r1)));
  CHECK(std::abs(r1.unified_ms - r2.unified_ms) < 0.2 * std::max(r1.unified_ms, r2.unified_ms));
  CHECK(std::abs(r1.three_stage_ms - r2.three_stage_ms) < 0.2 * std::max(r1.three_stage_ms, r2.three_stage_ms));
}
