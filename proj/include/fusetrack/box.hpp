// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>

namespace fusetrack {

// Axis-aligned box by center and size. The same type is used in normalized
// search-region coordinates and in frame pixels; context decides the unit.
struct BoundingBox {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;

  static BoundingBox from_xywh(double x, double y, double w, double h) { return {x + w / 2, y + h / 2, w, h}; }
  static BoundingBox from_corners(double x0, double y0, double x1, double y1) {
    return {(x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0};
  }

  double x0() const { return cx - w / 2; }
  double y0() const { return cy - h / 2; }
  double x1() const { return cx + w / 2; }
  double y1() const { return cy + h / 2; }
  double area() const { return w * h; }

  bool operator==(const BoundingBox&) const = default;
};

// Clamps the center into [0,1]^2 and the extent to lie within the unit square,
// keeping a strictly positive size.
inline BoundingBox clamp_to_unit(BoundingBox b) {
  constexpr double kMin = 1e-6;
  b.cx = std::clamp(b.cx, 0.0, 1.0);
  b.cy = std::clamp(b.cy, 0.0, 1.0);
  b.w = std::clamp(b.w, kMin, 1.0);
  b.h = std::clamp(b.h, kMin, 1.0);
  return b;
}

}  // namespace fusetrack
