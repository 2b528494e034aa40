#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <array>

namespace vdepth {

/// Pinhole parameters of a rectified camera. (cx, cy) is the principal
/// point; pixel (u, v) coordinates refer to pixel centers with the origin
/// at the top-left pixel center.
struct CameraIntrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;

  Eigen::Matrix3d matrix() const {
    Eigen::Matrix3d k;
    k << fx, 0, cx, 0, fy, cy, 0, 0, 1;
    return k;
  }

  /// Unnormalized viewing ray K^-1 [u, v, 1]^T; its z component is 1, so a
  /// point at depth z along the ray is z * ray(u, v).
  Eigen::Vector3d ray(double u, double v) const {
    return {(u - cx) / fx, (v - cy) / fy, 1.0};
  }

  /// Throws std::invalid_argument unless fx, fy > 0 (which also makes the
  /// 3x3 matrix invertible).
  void validate() const;
};

/// Direct isometry: x -> rotation * x + translation.
struct RigidTransform {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  Eigen::Vector3d apply(const Eigen::Vector3d& x) const {
    return rotation * x + translation;
  }

  RigidTransform inverse() const {
    return {rotation.transpose(), -(rotation.transpose() * translation)};
  }

  /// this after other: x -> this(other(x)).
  RigidTransform compose(const RigidTransform& other) const {
    return {rotation * other.rotation,
            rotation * other.translation + translation};
  }

  /// True iff R^T R = I and det R = 1 within tol.
  bool is_valid(double tol = 1e-10) const;
};

/// 3-D Gaussian with symmetric positive-semidefinite covariance.
struct Gaussian3 {
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
};

/// Back-projects pixel (u, v) at depth z into camera coordinates:
/// z * K^-1 [u, v, 1]^T. Throws std::domain_error for z <= 0.
Eigen::Vector3d backproject(double u, double v, double z,
                            const CameraIntrinsics& k);

/// Jacobian of the (u, v, z) -> (x, y, z) coordinate change at (u, v, z):
///   [ z/fx   0     (u-cx)/fx ]
///   [ 0      z/fy  (v-cy)/fy ]
///   [ 0      0     1         ]
/// Throws std::domain_error for z <= 0.
Eigen::Matrix3d jacobian_gamma(double u, double v, double z,
                               const CameraIntrinsics& k);

/// First-order propagation of pixel/depth noise into a 3-D covariance:
/// Gamma * diag(sigma_u^2, sigma_v^2, sigma_z^2) * Gamma^T evaluated at
/// (u, v, mu_z), symmetrized. Throws std::domain_error for mu_z <= 0 and
/// std::invalid_argument for negative standard deviations.
Eigen::Matrix3d propagate_covariance(double u, double v, double mu_z,
                                     double sigma_z, double sigma_u,
                                     double sigma_v,
                                     const CameraIntrinsics& k);

/// Rodrigues exponential of an axis-angle vector paired with a translation.
/// The result satisfies the RigidTransform orthonormality invariants by
/// construction.
RigidTransform se3_from_params(const Eigen::Vector3d& axis_angle,
                               const Eigen::Vector3d& translation);

/// Derivatives dR/d(axis_angle_k) of the Rodrigues map, k = 0, 1, 2.
std::array<Eigen::Matrix3d, 3> rotation_jacobian(
    const Eigen::Vector3d& axis_angle);

/// Pushes a Gaussian through a rigid transform: mean' = R mean + t,
/// cov' = R cov R^T.
Gaussian3 transform_gaussian(const RigidTransform& t, const Gaussian3& g);

/// Skew-symmetric cross-product matrix [v]x.
Eigen::Matrix3d skew(const Eigen::Vector3d& v);

}  // namespace vdepth
