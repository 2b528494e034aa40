#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "vdepth/geometry.hpp"
#include "vdepth/raster.hpp"

namespace vdepth {

struct PixelCoord {
  int u = 0;
  int v = 0;
  friend bool operator==(const PixelCoord&, const PixelCoord&) = default;
};

/// Pixel-wise Gaussian depth distribution: mean and standard deviation
/// rasters in meters, sharing dimensions. Means are positive everywhere.
struct DepthDistribution {
  Raster mean;
  Raster std;

  DepthDistribution() = default;
  DepthDistribution(Raster mean_raster, Raster std_raster);

  int width() const { return mean.width(); }
  int height() const { return mean.height(); }

  /// Throws std::invalid_argument if shapes differ, any mean is
  /// nonpositive, or any std is negative.
  void validate() const;
};

/// Set of independent 3-D Gaussians indexed by the sampled pixel.
struct GaussianCloud {
  std::vector<PixelCoord> pixels;
  std::vector<Gaussian3> gaussians;

  std::size_t size() const { return gaussians.size(); }
};

/// Raster of standard-normal draws plus the seed that produced it.
struct NoiseField {
  Raster values;
  std::uint64_t seed = 0;

  static NoiseField standard_normal(int width, int height, std::uint64_t seed);
  static NoiseField zeros(int width, int height);
};

/// Reparameterized depth sample: mean + noise .* std, elementwise.
Raster sample_depth(const DepthDistribution& d, const NoiseField& noise);

/// Lifts the depth distribution at the given pixels into 3-D Gaussians:
/// mean = backproject(u, v, mu(u, v)), cov = propagate_covariance with the
/// per-pixel depth std and the fixed pixel stds (sigma_u, sigma_v).
/// Output order follows the input pixel order.
GaussianCloud lift_cloud(const DepthDistribution& d, const CameraIntrinsics& k,
                         std::span<const PixelCoord> pixels, double sigma_u,
                         double sigma_v);

/// Variable part of the negative entropy of the cloud under rigid motion:
/// 1/2 sum_i log det(cov_i), additive constant dropped. Throws
/// std::domain_error on a non-positive-definite covariance.
double entropy_term(const GaussianCloud& c);

/// Squared Mahalanobis distance (x - mean)^T cov^-1 (x - mean). Throws
/// std::domain_error on a non-positive-definite covariance.
double mahalanobis_sq(const Eigen::Vector3d& x, const Gaussian3& g);

/// Gradient of mahalanobis_sq with respect to its inputs.
struct MahalanobisGrad {
  Eigen::Vector3d d_x;
  Eigen::Vector3d d_mean;
  Eigen::Matrix3d d_cov;
};
MahalanobisGrad mahalanobis_sq_grad(const Eigen::Vector3d& x,
                                    const Gaussian3& g);

}  // namespace vdepth
