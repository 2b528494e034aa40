#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "vdepth/depthdist.hpp"
#include "vdepth/raster.hpp"

namespace vdepth {

inline constexpr double kDefaultDepthCap = 80.0;
inline constexpr double kDefaultSigmaFloor = 1e-3;

/// The seven depth metrics plus the number of pixels they were computed on.
struct MetricReport {
  double abs_rel = 0.0;
  double sq_rel = 0.0;
  double rmse = 0.0;
  double rmse_log = 0.0;
  double d1 = 0.0;  // delta < 1.25
  double d2 = 0.0;  // delta < 1.25^2
  double d3 = 0.0;  // delta < 1.25^3
  std::int64_t valid_count = 0;
};

struct RemovalCurve {
  std::vector<double> percentages;
  std::vector<MetricReport> reports;
};

/// Optional per-pixel validity; empty means all pixels valid.
using ValidMask = std::vector<std::uint8_t>;

/// Evaluates pred against gt on pixels that are valid, have gt > 0 and
/// gt < cap. delta thresholds use strict inequality (a ratio of exactly
/// 1.25 fails delta_1). Throws std::domain_error when no pixel qualifies.
MetricReport depth_metrics(const Raster& pred, const Raster& gt,
                           const ValidMask& valid_mask = {},
                           double cap = kDefaultDepthCap);

/// Mean Gaussian negative log-likelihood of gt under N(mean, max(std,
/// sigma_floor)^2), over valid pixels.
double nll(const DepthDistribution& d, const Raster& gt,
           const ValidMask& valid_mask = {},
           double sigma_floor = kDefaultSigmaFloor);

/// Closed-form uniform-sigma NLL minimizer: sigma* = rms(gt - mean) over
/// valid pixels (clamped to sigma_floor), and the NLL attained there.
struct UniformOptResult {
  double sigma = 0.0;
  double nll = 0.0;
};
UniformOptResult uniform_opt_nll(const Raster& mean, const Raster& gt,
                                 const ValidMask& valid_mask = {},
                                 double sigma_floor = kDefaultSigmaFloor);

/// For each percentage, drops that share of valid pixels in decreasing
/// sigma order (ties by flat pixel index, ascending) and re-evaluates
/// depth_metrics on the remainder.
RemovalCurve outlier_removal_curve(const DepthDistribution& d,
                                   const Raster& gt,
                                   const ValidMask& valid_mask,
                                   std::span<const double> percentages,
                                   double cap = kDefaultDepthCap);

/// Multiplies pred by median(gt) / median(pred) over valid pixels; the
/// conventional monocular-evaluation alignment, off by default.
Raster median_scale(const Raster& pred, const Raster& gt,
                    const ValidMask& valid_mask = {},
                    double cap = kDefaultDepthCap);

}  // namespace vdepth
