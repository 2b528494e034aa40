#pragma once

#include <vector>

#include "vdepth/depthdist.hpp"
#include "vdepth/geometry.hpp"
#include "vdepth/image.hpp"

namespace vdepth {

struct RefineConfig {
  int hypothesis_count = 10;         // N_k
  double alpha = 0.2;                // perturbation range, multiplier of sigma
  bool include_unperturbed = false;  // append an extra alpha = 0 hypothesis
  double depth_floor = 0.1;          // meters; hypotheses clamped here
  double beta = 0.85;                // photometric energy blend

  void validate() const;
};

/// Perturbation multipliers: equally spaced over [-alpha, +alpha],
/// endpoints included; a single hypothesis uses 0.
std::vector<double> hypothesis_multipliers(const RefineConfig& cfg);

/// Hypothesis k is mean + multiplier_k * std, clamped to the depth floor.
std::vector<Raster> hypothesis_depths(const Raster& mean, const Raster& std,
                                      const RefineConfig& cfg);

/// Per-pixel selection of the hypothesis whose warp of the previous image
/// has the lowest photometric energy against i_t. pose maps the current
/// camera's coordinates into the previous camera's. Ties resolve toward
/// the smaller |multiplier|; pixels where every hypothesis projects
/// invalid keep the input mean.
Raster refine_depth(const DepthDistribution& d, const Image& i_t,
                    const Image& i_prev, const RigidTransform& pose,
                    const CameraIntrinsics& k, const RefineConfig& cfg);

/// Combines an estimate with the re-flipped estimate from the horizontally
/// flipped input: averaged mean plus the |difference| baseline sigma.
struct FlipResult {
  Raster mean;
  Raster derived_std;
};
FlipResult flip_postprocess(const DepthDistribution& d,
                            const DepthDistribution& d_flipped_input);

}  // namespace vdepth
