// SPDX-License-Identifier: Apache-2.0

#include <string>

#include "doctest.h"
#include "fusetrack/io.hpp"

using namespace fusetrack;

namespace {

TrackOutput output(double x, double y, Modality chosen) {
  TrackOutput o;
  o.box = BoundingBox::from_xywh(x, y, 20, 20);
  o.both_boxes = {o.box, BoundingBox::from_xywh(x + 1.0 / 3.0, y, 20, 21)};
  o.chosen = chosen;
  o.reliability = make_reliability(0.1, -0.7);
  return o;
}

}  // namespace

TEST_CASE("result file round-trip is byte-identical") {
  const std::vector<TrackOutput> outs{output(10, 10, Modality::rgb), output(11.125, 9.5, Modality::thermal)};
  const auto file = make_result_file(outs, "# model.dim=64\n# seed=3\n");
  REQUIRE(file.lines.size() == 2);
  CHECK(file.provenance == std::vector<std::string>{"model.dim=64", "seed=3"});
  const auto text = format_result_file(file);
  const auto back = parse_result_file(text);
  CHECK(format_result_file(back) == text);
  CHECK(back.lines[1].chosen == Modality::thermal);
  CHECK(back.lines[1].t_box == to_xywh(outs[1].both_boxes[1]));
  CHECK(back.lines[0].r_t == outs[0].reliability.r_t);
  const auto boxes = result_boxes(back);
  CHECK(boxes[1].cx == doctest::Approx(21.125));
}

TEST_CASE("malformed result files are rejected with the line number") {
  CHECK_THROWS_WITH_AS(parse_result_file("0,rgb,1,2\n"), doctest::Contains("line 1"), FormatError);
  const std::string row = ",rgb,0,0,1,1,2,2,1,1,2,2,1,1,2,2\n";
  CHECK_NOTHROW(parse_result_file("0" + row + "1" + row));
  CHECK_THROWS_WITH_AS(parse_result_file("0" + row + "2" + row), doctest::Contains("out of order"), FormatError);
  CHECK_THROWS_AS(parse_result_file("0,ir,0,0,1,1,2,2,1,1,2,2,1,1,2,2\n"), FormatError);
  CHECK_THROWS_AS(parse_result_file("0,rgb,x,0,1,1,2,2,1,1,2,2,1,1,2,2\n"), FormatError);
}

TEST_CASE("annotations round-trip and zero sizes mark missing boxes") {
  std::vector<std::optional<BoundingBox>> boxes{BoundingBox::from_xywh(1, 2, 3, 4), std::nullopt,
                                                BoundingBox::from_xywh(0.5, 0.25, 7, 9)};
  const auto text = format_annotations(boxes);
  CHECK(text == "1,2,3,4\n0,0,0,0\n0.5,0.25,7,9\n");
  const auto back = parse_annotations(text);
  REQUIRE(back.size() == 3);
  CHECK_FALSE(back[1].has_value());
  CHECK(back[2]->w == 7);
  CHECK(format_annotations(back) == text);
  CHECK_THROWS_AS(parse_annotations("1,2,3\n"), FormatError);
}

TEST_CASE("three-frame evaluation fixture") {
  const auto gt = BoundingBox::from_xywh(10, 10, 20, 20);
  const std::vector<BoundingBox> pred{gt, BoundingBox::from_xywh(40, 10, 20, 20), BoundingBox::from_xywh(15, 10, 20, 20)};
  const auto ann = merge_annotations({gt, gt, gt}, {});
  const auto r = evaluate(pred, ann, 20.0);
  // Center errors 0, 30, 5; overlaps 1, 0, 0.6.
  CHECK(r.pr == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  // Over 21 thresholds: 12 count two frames, 8 count one, the last none.
  CHECK(r.sr == doctest::Approx(32.0 / 63.0).epsilon(1e-15));
  // Without thermal annotations the max-over-modalities rates reduce to PR and SR.
  CHECK(r.mpr == r.pr);
  CHECK(r.msr == r.sr);
  const auto curves = format_curves(r);
  CHECK(curves.rfind("curve,threshold,value\n", 0) == 0);
  CHECK(curves.find("success,") != std::string::npos);
}

TEST_CASE("frames without any annotation are skipped") {
  const auto gt = BoundingBox::from_xywh(10, 10, 20, 20);
  const auto ann = merge_annotations({gt, std::nullopt}, {std::nullopt, std::nullopt});
  CHECK(ann[0].valid);
  CHECK_FALSE(ann[1].valid);
  const auto r = evaluate({gt, BoundingBox::from_xywh(90, 90, 5, 5)}, ann);
  CHECK(r.pr == 1.0);
  CHECK_THROWS_AS(merge_annotations({gt}, {gt, gt}), ContractError);
}

TEST_CASE("text files round-trip") {
  const std::string path = "/tmp/fusetrack_io_test.txt";
  write_text_file(path, "a,b\n1,2\n");
  CHECK(read_text_file(path) == "a,b\n1,2\n");
  CHECK_THROWS_AS(read_text_file("/nonexistent/x.txt"), std::runtime_error);
}
