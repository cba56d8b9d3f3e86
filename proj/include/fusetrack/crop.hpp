// SPDX-License-Identifier: Apache-2.0
//
// Square context crops around a box, resampled bilinearly to a fixed size.
// The same geometry is applied to both modalities of a frame.

#pragma once

#include "fusetrack/box.hpp"
#include "fusetrack/embedding.hpp"

namespace fusetrack {

struct CropConfig {
  double template_factor = 2.0;
  double search_factor = 4.0;
  std::size_t template_size = 32;
  std::size_t search_size = 64;

  // Throws DomainError unless factors are >= 1 and search_size == 2 * template_size.
  void validate() const;
};

// Maps between frame pixels and normalized crop coordinates in [0, 1].
struct CropTransform {
  double x0 = 0.0;  // frame position of the crop's top-left corner
  double y0 = 0.0;
  double side = 1.0;  // crop side in frame pixels

  BoundingBox to_crop(const BoundingBox& frame_box) const {
    return {(frame_box.cx - x0) / side, (frame_box.cy - y0) / side, frame_box.w / side, frame_box.h / side};
  }
  BoundingBox to_frame(const BoundingBox& crop_box) const {
    return {x0 + crop_box.cx * side, y0 + crop_box.cy * side, crop_box.w * side, crop_box.h * side};
  }
};

struct Crop {
  ImagePair images;
  CropTransform transform;
};

// Square crop of side `side` centered at (cx, cy), resized to out x out.
// Samples outside the frame take the channel mean of that image.
Crop crop_square(const ImagePair& frame, double cx, double cy, double side, std::size_t out);

// Side factor * sqrt(w h), centered on the box. DomainError on degenerate boxes.
Crop crop_template(const ImagePair& frame, const BoundingBox& box, const CropConfig& cfg);
Crop crop_search(const ImagePair& frame, const BoundingBox& box, const CropConfig& cfg);

}  // namespace fusetrack
