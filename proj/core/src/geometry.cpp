#include "vdepth/geometry.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace vdepth {

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) {
    throw std::invalid_argument("CameraIntrinsics: focal lengths must be positive, got fx=" +
                                std::to_string(fx) + " fy=" + std::to_string(fy));
  }
}

bool RigidTransform::is_valid(double tol) const {
  const Eigen::Matrix3d gram = rotation.transpose() * rotation;
  if ((gram - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > tol) return false;
  return std::abs(rotation.determinant() - 1.0) <= tol;
}

Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d m;
  m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return m;
}

Eigen::Vector3d backproject(double u, double v, double z,
                            const CameraIntrinsics& k) {
  if (!(z > 0.0)) {
    throw std::domain_error("backproject: depth must be positive, got " +
                            std::to_string(z));
  }
  return z * k.ray(u, v);
}

Eigen::Matrix3d jacobian_gamma(double u, double v, double z,
                               const CameraIntrinsics& k) {
  if (!(z > 0.0)) {
    throw std::domain_error("jacobian_gamma: depth must be positive, got " +
                            std::to_string(z));
  }
  Eigen::Matrix3d gamma;
  gamma << z / k.fx, 0, (u - k.cx) / k.fx,
           0, z / k.fy, (v - k.cy) / k.fy,
           0, 0, 1;
  return gamma;
}

Eigen::Matrix3d propagate_covariance(double u, double v, double mu_z,
                                     double sigma_z, double sigma_u,
                                     double sigma_v,
                                     const CameraIntrinsics& k) {
  if (sigma_z < 0.0 || sigma_u < 0.0 || sigma_v < 0.0) {
    throw std::invalid_argument(
        "propagate_covariance: standard deviations must be nonnegative");
  }
  const Eigen::Matrix3d gamma = jacobian_gamma(u, v, mu_z, k);
  const Eigen::Vector3d diag(sigma_u * sigma_u, sigma_v * sigma_v,
                             sigma_z * sigma_z);
  Eigen::Matrix3d cov = gamma * diag.asDiagonal() * gamma.transpose();
  // Exact symmetry so downstream Cholesky factorizations accept the result.
  cov = 0.5 * (cov + cov.transpose()).eval();
  return cov;
}

namespace {

// Rodrigues coefficients with series fallbacks near theta = 0:
// A = sin(theta)/theta, B = (1 - cos(theta))/theta^2.
void rodrigues_coeffs(double theta, double& a, double& b) {
  const double t2 = theta * theta;
  if (theta < 1e-4) {
    a = 1.0 - t2 / 6.0 + t2 * t2 / 120.0;
    b = 0.5 - t2 / 24.0 + t2 * t2 / 720.0;
  } else {
    a = std::sin(theta) / theta;
    b = (1.0 - std::cos(theta)) / t2;
  }
}

}  // namespace

RigidTransform se3_from_params(const Eigen::Vector3d& axis_angle,
                               const Eigen::Vector3d& translation) {
  const double theta = axis_angle.norm();
  double a, b;
  rodrigues_coeffs(theta, a, b);
  const Eigen::Matrix3d w = skew(axis_angle);
  RigidTransform t;
  t.rotation = Eigen::Matrix3d::Identity() + a * w + b * w * w;
  t.translation = translation;
  return t;
}

std::array<Eigen::Matrix3d, 3> rotation_jacobian(
    const Eigen::Vector3d& axis_angle) {
  const double theta = axis_angle.norm();
  const double t2 = theta * theta;
  double a, b;
  rodrigues_coeffs(theta, a, b);
  // dA/dtheta / theta and dB/dtheta / theta, with series near zero.
  double da_over_theta, db_over_theta;
  if (theta < 1e-4) {
    da_over_theta = -1.0 / 3.0 + t2 / 30.0;
    db_over_theta = -1.0 / 12.0 + t2 / 180.0;
  } else {
    da_over_theta = (theta * std::cos(theta) - std::sin(theta)) / (t2 * theta);
    db_over_theta =
        (theta * std::sin(theta) - 2.0 * (1.0 - std::cos(theta))) / (t2 * t2);
  }
  const Eigen::Matrix3d w = skew(axis_angle);
  const Eigen::Matrix3d w2 = w * w;
  std::array<Eigen::Matrix3d, 3> jac;
  for (int k = 0; k < 3; ++k) {
    const Eigen::Matrix3d ek = skew(Eigen::Vector3d::Unit(k));
    const double vk = axis_angle[k];
    jac[k] = da_over_theta * vk * w + a * ek + db_over_theta * vk * w2 +
             b * (ek * w + w * ek);
  }
  return jac;
}

Gaussian3 transform_gaussian(const RigidTransform& t, const Gaussian3& g) {
  Gaussian3 out;
  out.mean = t.apply(g.mean);
  out.cov = t.rotation * g.cov * t.rotation.transpose();
  return out;
}

}  // namespace vdepth
