#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace vdepth {

/// Row-major 2-D grid of doubles. Indexed as (u, v) with u the column and
/// v the row; (0, 0) is the top-left pixel center.
class Raster {
 public:
  Raster() = default;
  Raster(int width, int height, double fill = 0.0)
      : width_(width), height_(height) {
    if (width <= 0 || height <= 0) {
      throw std::invalid_argument("Raster: dimensions must be positive, got " +
                                  std::to_string(width) + "x" +
                                  std::to_string(height));
    }
    data_.assign(static_cast<std::size_t>(width) * height, fill);
  }

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(int u, int v) { return data_[idx(u, v)]; }
  double operator()(int u, int v) const { return data_[idx(u, v)]; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  auto begin() { return data_.begin(); }
  auto end() { return data_.end(); }
  auto begin() const { return data_.begin(); }
  auto end() const { return data_.end(); }

  bool contains(int u, int v) const {
    return u >= 0 && u < width_ && v >= 0 && v < height_;
  }
  bool same_shape(const Raster& other) const {
    return width_ == other.width_ && height_ == other.height_;
  }

  void fill(double value) { std::fill(data_.begin(), data_.end(), value); }

  double sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }
  double mean() const { return data_.empty() ? 0.0 : sum() / data_.size(); }
  double min_value() const { return *std::min_element(data_.begin(), data_.end()); }
  double max_value() const { return *std::max_element(data_.begin(), data_.end()); }

  static std::size_t flat_index(int u, int v, int width) {
    return static_cast<std::size_t>(v) * width + u;
  }

 private:
  std::size_t idx(int u, int v) const {
    return static_cast<std::size_t>(v) * width_ + u;
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<double> data_;
};

/// Mirrors a raster about its vertical center line (u -> width-1-u).
inline Raster flip_horizontal(const Raster& r) {
  Raster out(r.width(), r.height());
  for (int v = 0; v < r.height(); ++v) {
    for (int u = 0; u < r.width(); ++u) {
      out(u, v) = r(r.width() - 1 - u, v);
    }
  }
  return out;
}

inline void require_same_shape(const Raster& a, const Raster& b,
                               const char* what) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(what) + ": raster dimensions " +
                                std::to_string(a.width()) + "x" +
                                std::to_string(a.height()) + " vs " +
                                std::to_string(b.width()) + "x" +
                                std::to_string(b.height()));
  }
}

}  // namespace vdepth
