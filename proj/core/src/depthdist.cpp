#include "vdepth/depthdist.hpp"

#include <Eigen/Cholesky>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

namespace vdepth {

DepthDistribution::DepthDistribution(Raster mean_raster, Raster std_raster)
    : mean(std::move(mean_raster)), std(std::move(std_raster)) {
  validate();
}

void DepthDistribution::validate() const {
  require_same_shape(mean, std, "DepthDistribution");
  for (std::size_t i = 0; i < mean.size(); ++i) {
    if (!(mean[i] > 0.0)) {
      throw std::invalid_argument(
          "DepthDistribution: mean depth must be positive everywhere, got " +
          std::to_string(mean[i]));
    }
    if (std[i] < 0.0) {
      throw std::invalid_argument(
          "DepthDistribution: std must be nonnegative everywhere");
    }
  }
}

NoiseField NoiseField::standard_normal(int width, int height,
                                       std::uint64_t seed) {
  NoiseField n{Raster(width, height), seed};
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  for (auto& x : n.values) x = dist(rng);
  return n;
}

NoiseField NoiseField::zeros(int width, int height) {
  return NoiseField{Raster(width, height, 0.0), 0};
}

Raster sample_depth(const DepthDistribution& d, const NoiseField& noise) {
  require_same_shape(d.mean, noise.values, "sample_depth");
  Raster out(d.width(), d.height());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = d.mean[i] + noise.values[i] * d.std[i];
  }
  return out;
}

GaussianCloud lift_cloud(const DepthDistribution& d, const CameraIntrinsics& k,
                         std::span<const PixelCoord> pixels, double sigma_u,
                         double sigma_v) {
  GaussianCloud cloud;
  cloud.pixels.assign(pixels.begin(), pixels.end());
  cloud.gaussians.reserve(pixels.size());
  for (const auto& p : pixels) {
    if (!d.mean.contains(p.u, p.v)) {
      throw std::invalid_argument("lift_cloud: pixel (" + std::to_string(p.u) +
                                  ", " + std::to_string(p.v) +
                                  ") outside the raster");
    }
    const double mu = d.mean(p.u, p.v);
    Gaussian3 g;
    g.mean = backproject(p.u, p.v, mu, k);
    g.cov = propagate_covariance(p.u, p.v, mu, d.std(p.u, p.v), sigma_u,
                                 sigma_v, k);
    cloud.gaussians.push_back(g);
  }
  return cloud;
}

namespace {

Eigen::LLT<Eigen::Matrix3d> checked_llt(const Eigen::Matrix3d& cov,
                                        const char* what) {
  Eigen::LLT<Eigen::Matrix3d> llt(cov);
  if (llt.info() != Eigen::Success) {
    throw std::domain_error(std::string(what) +
                            ": covariance is not positive-definite");
  }
  return llt;
}

}  // namespace

double entropy_term(const GaussianCloud& c) {
  double acc = 0.0;
  for (const auto& g : c.gaussians) {
    const auto llt = checked_llt(g.cov, "entropy_term");
    // log det via the Cholesky factor: 2 * sum log L_ii.
    const Eigen::Matrix3d l = llt.matrixL();
    acc += std::log(l(0, 0)) + std::log(l(1, 1)) + std::log(l(2, 2));
  }
  return acc;
}

double mahalanobis_sq(const Eigen::Vector3d& x, const Gaussian3& g) {
  const auto llt = checked_llt(g.cov, "mahalanobis_sq");
  const Eigen::Vector3d diff = x - g.mean;
  return diff.dot(llt.solve(diff));
}

MahalanobisGrad mahalanobis_sq_grad(const Eigen::Vector3d& x,
                                    const Gaussian3& g) {
  const auto llt = checked_llt(g.cov, "mahalanobis_sq_grad");
  const Eigen::Vector3d diff = x - g.mean;
  const Eigen::Vector3d w = llt.solve(diff);  // cov^-1 (x - mean)
  MahalanobisGrad grad;
  grad.d_x = 2.0 * w;
  grad.d_mean = -2.0 * w;
  grad.d_cov = -w * w.transpose();
  return grad;
}

}  // namespace vdepth
