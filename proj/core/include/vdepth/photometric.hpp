#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "vdepth/depthdist.hpp"
#include "vdepth/geometry.hpp"
#include "vdepth/image.hpp"

namespace vdepth {

inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;
inline constexpr double kDefaultBeta = 0.85;

/// Fractional source coordinates (u_hat, v_hat) for each target pixel.
/// Entries flagged invalid (point at or behind the camera) are excluded
/// from sampling and from loss aggregation; out-of-bounds coordinates stay
/// valid and are resolved by the border-clamp policy of the sampler.
struct PixelMap {
  Raster u_hat;
  Raster v_hat;
  std::vector<std::uint8_t> valid;

  int width() const { return u_hat.width(); }
  int height() const { return u_hat.height(); }
  bool is_valid(int u, int v) const {
    return valid[Raster::flat_index(u, v, width())] != 0;
  }
};

/// Perspective projection of one 3-D point per target pixel. cloud[i] is
/// the point observed at pixels[i]; the projected coordinates land in the
/// map at that pixel.
PixelMap project_map(std::span<const Eigen::Vector3d> cloud,
                     const CameraIntrinsics& k,
                     std::span<const PixelCoord> pixels);

/// Bilinear sampling with border clamp; invalid map entries produce zeros.
Image bilinear_sample(const Image& img, const PixelMap& map);

/// Channel-mean SSIM with 3x3 mean pooling (reflected borders) and the
/// usual stabilizers C1 = 0.01^2, C2 = 0.03^2. Values lie in [-1, 1].
Raster ssim(const Image& a, const Image& b);

/// Per-pixel photometric energy beta/2 (1 - SSIM) + (1 - beta) |a - b|_1
/// with channel-mean L1.
Raster photometric_energy(const Image& i_t, const Image& i_hat,
                          double beta = kDefaultBeta);

/// Squared-error energy: per-pixel channel mean of (a - b)^2.
Raster l2_energy(const Image& i_t, const Image& i_hat);

/// Per-pixel minimum over the two reprojection maps, gated by the
/// monodepth2 auto-mask: a pixel contributes only where the cheaper
/// identity (unwarped) loss is strictly larger than the cheaper
/// reprojection loss. Ties mask the pixel out.
struct MaskedLoss {
  Raster loss;                       // masked pixels hold 0
  std::vector<std::uint8_t> mask;    // 1 where the pixel contributes
};
MaskedLoss min_reprojection_automask(const Raster& losses_prev,
                                     const Raster& losses_next,
                                     const Raster& identity_prev,
                                     const Raster& identity_next);

/// Edge-aware first-order smoothness of mean-normalized inverse mean
/// depth, weighted by exp(-|dI|) image gradients.
double smooth_loss(const DepthDistribution& d, const Image& img);

/// Mean of the standard-deviation raster.
double std_reg_loss(const DepthDistribution& d);

// ---------------------------------------------------------------------------
// Warping and reverse-mode support. The backward entry points recompute the
// cheap intermediates instead of carrying tapes; each returns the gradient
// of sum(upstream .* output) with respect to the named inputs.

struct WarpResult {
  PixelMap map;
  Image warped;
};

/// Lift depth -> transform by pose -> project -> bilinear-sample source.
/// pose maps target-camera coordinates into source-camera coordinates.
WarpResult warp_from_depth(const Raster& depth, const RigidTransform& pose,
                           const CameraIntrinsics& k, const Image& source);

struct WarpGrad {
  Raster d_depth;
  Eigen::Matrix3d d_rotation = Eigen::Matrix3d::Zero();
  Eigen::Vector3d d_translation = Eigen::Vector3d::Zero();
};
WarpGrad warp_backward(const Raster& depth, const RigidTransform& pose,
                       const CameraIntrinsics& k, const Image& source,
                       const Image& grad_warped);

/// Gradient of photometric_energy with respect to i_hat.
Image photometric_energy_backward(const Image& i_t, const Image& i_hat,
                                  double beta, const Raster& grad_energy);

/// Gradient of l2_energy with respect to i_hat.
Image l2_energy_backward(const Image& i_t, const Image& i_hat,
                         const Raster& grad_energy);

/// Gradient of smooth_loss with respect to the mean depth raster.
Raster smooth_loss_grad(const DepthDistribution& d, const Image& img);

}  // namespace vdepth
