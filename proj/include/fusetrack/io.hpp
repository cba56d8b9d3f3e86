// SPDX-License-Identifier: Apache-2.0
//
// Text file formats.
//
// Result file: `#` lines carry provenance, then one line per frame:
//   frame,modality,r_rgb,r_t,x,y,w,h,rgb_x,rgb_y,rgb_w,rgb_h,t_x,t_y,t_w,t_h
// Boxes are top-left corner and size in frame pixels; numbers use %.17g so
// every double survives a write/read cycle.
//
// Annotation file: one `x,y,w,h` line per frame. A line with w <= 0 or h <= 0
// marks the frame as unannotated for that modality.

#pragma once

#include <array>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fusetrack/heads.hpp"
#include "fusetrack/metrics.hpp"

namespace fusetrack {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Xywh = std::array<double, 4>;

Xywh to_xywh(const BoundingBox& b);
BoundingBox from_xywh(const Xywh& v);

struct ResultLine {
  std::size_t frame = 0;
  Modality chosen = Modality::rgb;
  double r_rgb = 0.0, r_t = 0.0;
  Xywh box{}, rgb_box{}, t_box{};
};

struct ResultFile {
  std::vector<std::string> provenance;  // without the leading "# "
  std::vector<ResultLine> lines;
};

ResultFile make_result_file(const std::vector<TrackOutput>& outputs, const std::string& provenance_text);
std::string format_result_file(const ResultFile& file);
ResultFile parse_result_file(const std::string& text);
std::vector<BoundingBox> result_boxes(const ResultFile& file);

std::string format_annotations(const std::vector<std::optional<BoundingBox>>& boxes);
// Absent entries come back as nullopt.
std::vector<std::optional<BoundingBox>> parse_annotations(const std::string& text);
// Combines per-modality annotation lists; either may be empty (modality not
// annotated). Frames with no box in either modality are marked invalid.
std::vector<FrameAnnotation> merge_annotations(const std::vector<std::optional<BoundingBox>>& rgb,
                                               const std::vector<std::optional<BoundingBox>>& thermal);

// CSV with columns curve,threshold,value for all four curves.
std::string format_curves(const EvalReport& report);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace fusetrack
