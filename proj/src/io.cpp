// SPDX-License-Identifier: Apache-2.0

#include "fusetrack/io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace fusetrack {

namespace {

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_num(const std::string& s, std::size_t line_no) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw FormatError("line " + std::to_string(line_no) + ": bad number '" + s + "'");
}

std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

}  // namespace

Xywh to_xywh(const BoundingBox& b) { return {b.x0(), b.y0(), b.w, b.h}; }
BoundingBox from_xywh(const Xywh& v) { return BoundingBox::from_xywh(v[0], v[1], v[2], v[3]); }

ResultFile make_result_file(const std::vector<TrackOutput>& outputs, const std::string& provenance_text) {
  ResultFile f;
  std::istringstream in(provenance_text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("# ", 0) == 0) line = line.substr(2);
    f.provenance.push_back(line);
  }
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    const auto& o = outputs[i];
    f.lines.push_back({i, o.chosen, o.reliability.r_rgb, o.reliability.r_t, to_xywh(o.box),
                       to_xywh(o.both_boxes[0]), to_xywh(o.both_boxes[1])});
  }
  return f;
}

std::string format_result_file(const ResultFile& file) {
  std::string out;
  for (const auto& p : file.provenance) out += "# " + p + "\n";
  for (const auto& l : file.lines) {
    out += std::to_string(l.frame) + "," + modality_name(l.chosen) + "," + num(l.r_rgb) + "," + num(l.r_t);
    for (const auto* b : {&l.box, &l.rgb_box, &l.t_box})
      for (double v : *b) out += "," + num(v);
    out += "\n";
  }
  return out;
}

ResultFile parse_result_file(const std::string& text) {
  ResultFile f;
  std::istringstream in(text);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    line = strip_cr(line);
    if (line.empty()) continue;
    if (line[0] == '#') {
      f.provenance.push_back(line.rfind("# ", 0) == 0 ? line.substr(2) : line.substr(1));
      continue;
    }
    const auto cells = split_commas(line);
    if (cells.size() != 16)
      throw FormatError("line " + std::to_string(n) + ": expected 16 fields, got " + std::to_string(cells.size()));
    ResultLine r;
    const double frame = parse_num(cells[0], n);
    if (frame < 0 || frame != static_cast<double>(static_cast<std::size_t>(frame)))
      throw FormatError("line " + std::to_string(n) + ": bad frame index '" + cells[0] + "'");
    r.frame = static_cast<std::size_t>(frame);
    if (cells[1] == "rgb") {
      r.chosen = Modality::rgb;
    } else if (cells[1] == "thermal") {
      r.chosen = Modality::thermal;
    } else {
      throw FormatError("line " + std::to_string(n) + ": bad modality '" + cells[1] + "'");
    }
    r.r_rgb = parse_num(cells[2], n);
    r.r_t = parse_num(cells[3], n);
    std::size_t c = 4;
    for (auto* b : {&r.box, &r.rgb_box, &r.t_box})
      for (double& v : *b) v = parse_num(cells[c++], n);
    if (r.frame != f.lines.size())
      throw FormatError("line " + std::to_string(n) + ": frame " + std::to_string(r.frame) + " out of order");
    f.lines.push_back(r);
  }
  return f;
}

std::vector<BoundingBox> result_boxes(const ResultFile& file) {
  std::vector<BoundingBox> out;
  for (const auto& l : file.lines) out.push_back(from_xywh(l.box));
  return out;
}

std::string format_annotations(const std::vector<std::optional<BoundingBox>>& boxes) {
  std::string out;
  for (const auto& b : boxes) {
    const Xywh v = b ? to_xywh(*b) : Xywh{0, 0, 0, 0};
    out += num(v[0]) + "," + num(v[1]) + "," + num(v[2]) + "," + num(v[3]) + "\n";
  }
  return out;
}

std::vector<std::optional<BoundingBox>> parse_annotations(const std::string& text) {
  std::vector<std::optional<BoundingBox>> out;
  std::istringstream in(text);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    line = strip_cr(line);
    if (line.empty()) continue;
    const auto cells = split_commas(line);
    if (cells.size() != 4)
      throw FormatError("annotation line " + std::to_string(n) + ": expected x,y,w,h");
    const Xywh v{parse_num(cells[0], n), parse_num(cells[1], n), parse_num(cells[2], n), parse_num(cells[3], n)};
    if (v[2] > 0 && v[3] > 0) {
      out.emplace_back(from_xywh(v));
    } else {
      out.emplace_back(std::nullopt);
    }
  }
  return out;
}

std::vector<FrameAnnotation> merge_annotations(const std::vector<std::optional<BoundingBox>>& rgb,
                                               const std::vector<std::optional<BoundingBox>>& thermal) {
  if (!rgb.empty() && !thermal.empty() && rgb.size() != thermal.size())
    throw ContractError("annotation files differ in frame count (" + std::to_string(rgb.size()) + " vs " +
                        std::to_string(thermal.size()) + ")");
  const auto n = std::max(rgb.size(), thermal.size());
  std::vector<FrameAnnotation> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!rgb.empty()) out[i].rgb_gt = rgb[i];
    if (!thermal.empty()) out[i].thermal_gt = thermal[i];
    out[i].valid = out[i].rgb_gt.has_value() || out[i].thermal_gt.has_value();
  }
  return out;
}

std::string format_curves(const EvalReport& report) {
  std::string out = "curve,threshold,value\n";
  auto emit = [&](const char* name, const std::vector<CurvePoint>& c) {
    for (const auto& p : c) out += std::string(name) + "," + num(p.threshold) + "," + num(p.value) + "\n";
  };
  emit("precision", report.precision_curve);
  emit("success", report.success_curve);
  emit("max_precision", report.max_precision_curve);
  emit("max_success", report.max_success_curve);
  return out;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << text;
  if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

}  // namespace fusetrack
