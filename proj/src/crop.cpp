// SPDX-License-Identifier: Apache-2.0

#include "fusetrack/crop.hpp"

#include <array>
#include <cmath>

namespace fusetrack {

namespace {

Tensor resample(const Tensor& img, const CropTransform& t, std::size_t out) {
  const auto h = img.dim(0), w = img.dim(1);
  auto src = img.data();
  std::array<double, 3> mean{0, 0, 0};
  for (std::size_t i = 0; i < h * w; ++i)
    for (int k = 0; k < 3; ++k) mean[k] += src[i * 3 + k];
  for (auto& m : mean) m /= static_cast<double>(h * w);

  auto pixel = [&](long y, long x, int k) {
    if (y < 0 || x < 0 || y >= static_cast<long>(h) || x >= static_cast<long>(w)) return mean[k];
    return src[(static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)) * 3 + k];
  };
  const double step = t.side / static_cast<double>(out);
  std::vector<double> dst(out * out * 3);
  for (std::size_t i = 0; i < out; ++i) {
    // Output pixel centers mapped to frame coordinates, pixel centers at +0.5.
    const double sy = t.y0 + (static_cast<double>(i) + 0.5) * step - 0.5;
    const long y0 = static_cast<long>(std::floor(sy));
    const double fy = sy - static_cast<double>(y0);
    for (std::size_t j = 0; j < out; ++j) {
      const double sx = t.x0 + (static_cast<double>(j) + 0.5) * step - 0.5;
      const long x0 = static_cast<long>(std::floor(sx));
      const double fx = sx - static_cast<double>(x0);
      for (int k = 0; k < 3; ++k) {
        const double top = (1 - fx) * pixel(y0, x0, k) + fx * pixel(y0, x0 + 1, k);
        const double bot = (1 - fx) * pixel(y0 + 1, x0, k) + fx * pixel(y0 + 1, x0 + 1, k);
        dst[(i * out + j) * 3 + k] = (1 - fy) * top + fy * bot;
      }
    }
  }
  return Tensor::from({out, out, 3}, std::move(dst));
}

Crop crop_around(const ImagePair& frame, const BoundingBox& box, double factor, std::size_t out) {
  if (!(box.w > 0.0) || !(box.h > 0.0) || !std::isfinite(box.cx) || !std::isfinite(box.cy)) {
    throw DomainError("crop: box must have positive, finite size");
  }
  return crop_square(frame, box.cx, box.cy, factor * std::sqrt(box.w * box.h), out);
}

}  // namespace

void CropConfig::validate() const {
  if (!(template_factor >= 1.0) || !(search_factor >= 1.0)) throw DomainError("crop factors must be at least 1");
  if (template_size == 0 || search_size != 2 * template_size) {
    throw DomainError("search crop size must be twice the template crop size");
  }
}

Crop crop_square(const ImagePair& frame, double cx, double cy, double side, std::size_t out) {
  if (!(side > 0.0) || out == 0) throw DomainError("crop: side and output size must be positive");
  if (frame.rgb.shape() != frame.thermal.shape()) throw ShapeError("crop: modalities differ in shape");
  Crop c;
  c.transform = {cx - side / 2, cy - side / 2, side};
  c.images = {resample(frame.rgb, c.transform, out), resample(frame.thermal, c.transform, out)};
  return c;
}

Crop crop_template(const ImagePair& frame, const BoundingBox& box, const CropConfig& cfg) {
  return crop_around(frame, box, cfg.template_factor, cfg.template_size);
}

Crop crop_search(const ImagePair& frame, const BoundingBox& box, const CropConfig& cfg) {
  return crop_around(frame, box, cfg.search_factor, cfg.search_size);
}

}  // namespace fusetrack
