#pragma once

#include <array>

#include "vdepth/raster.hpp"

namespace vdepth {

/// Three-channel image with values in [0, 1], stored planar (RGB order).
struct Image {
  std::array<Raster, 3> channel;

  Image() = default;
  Image(int width, int height, double fill = 0.0)
      : channel{Raster(width, height, fill), Raster(width, height, fill),
                Raster(width, height, fill)} {}

  int width() const { return channel[0].width(); }
  int height() const { return channel[0].height(); }

  bool same_shape(const Image& other) const {
    return channel[0].same_shape(other.channel[0]);
  }

  /// Clamps every value into [0, 1] in place.
  void clamp01() {
    for (auto& c : channel) {
      for (auto& x : c) x = std::clamp(x, 0.0, 1.0);
    }
  }

  static Image constant(int width, int height, double r, double g, double b) {
    Image img(width, height);
    img.channel[0].fill(r);
    img.channel[1].fill(g);
    img.channel[2].fill(b);
    return img;
  }
};

inline Image flip_horizontal(const Image& img) {
  Image out;
  for (int c = 0; c < 3; ++c) out.channel[c] = flip_horizontal(img.channel[c]);
  return out;
}

inline void require_same_shape(const Image& a, const Image& b,
                               const char* what) {
  require_same_shape(a.channel[0], b.channel[0], what);
}

}  // namespace vdepth
