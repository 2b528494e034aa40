#include "vdepth/refine.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "vdepth/detail/raster_ops.hpp"
#include "vdepth/photometric.hpp"

namespace vdepth {

void RefineConfig::validate() const {
  if (hypothesis_count < 1) {
    throw std::invalid_argument("RefineConfig: hypothesis_count must be >= 1");
  }
  if (alpha < 0.0) {
    throw std::invalid_argument("RefineConfig: alpha must be >= 0");
  }
}

std::vector<double> hypothesis_multipliers(const RefineConfig& cfg) {
  cfg.validate();
  std::vector<double> mult;
  if (cfg.hypothesis_count == 1) {
    mult.push_back(0.0);
  } else {
    for (int k = 0; k < cfg.hypothesis_count; ++k) {
      mult.push_back(-cfg.alpha +
                     2.0 * cfg.alpha * k / (cfg.hypothesis_count - 1));
    }
  }
  if (cfg.include_unperturbed) mult.push_back(0.0);
  return mult;
}

std::vector<Raster> hypothesis_depths(const Raster& mean, const Raster& std,
                                      const RefineConfig& cfg) {
  require_same_shape(mean, std, "hypothesis_depths");
  const auto mult = hypothesis_multipliers(cfg);
  std::vector<Raster> out;
  out.reserve(mult.size());
  for (const double a : mult) {
    Raster r(mean.width(), mean.height());
    for (std::size_t i = 0; i < r.size(); ++i) {
      r[i] = std::max(mean[i] + a * std[i], cfg.depth_floor);
    }
    out.push_back(std::move(r));
  }
  return out;
}

namespace {

// Per-hypothesis photometric energy with the target-side SSIM moments
// hoisted out of the loop; identical values to photometric_energy().
struct TargetMoments {
  std::array<Raster, 3> mu_x, sxx_plus_mu2;  // pooled mean and raw moment
};

TargetMoments target_moments(const Image& i_t) {
  TargetMoments m;
  for (int c = 0; c < 3; ++c) {
    m.mu_x[c] = detail::avgpool3(i_t.channel[c]);
    m.sxx_plus_mu2[c] =
        detail::avgpool3(detail::hadamard(i_t.channel[c], i_t.channel[c]));
  }
  return m;
}

Raster energy_against(const Image& i_t, const TargetMoments& tm,
                      const Image& i_hat, double beta) {
  const int w = i_t.width(), h = i_t.height();
  Raster out(w, h, 0.0);
  for (int c = 0; c < 3; ++c) {
    const Raster& x = i_t.channel[c];
    const Raster& y = i_hat.channel[c];
    Raster mu_y, pyy, pxy;
    detail::pool3_pair(y, x, mu_y, pyy, pxy);
    const Raster& mu_x = tm.mu_x[c];
    const Raster& pxx = tm.sxx_plus_mu2[c];
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double sxx = pxx[i] - mu_x[i] * mu_x[i];
      const double syy = pyy[i] - mu_y[i] * mu_y[i];
      const double sxy = pxy[i] - mu_x[i] * mu_y[i];
      const double t1 = 2.0 * mu_x[i] * mu_y[i] + kSsimC1;
      const double t2 = 2.0 * sxy + kSsimC2;
      const double b1 = mu_x[i] * mu_x[i] + mu_y[i] * mu_y[i] + kSsimC1;
      const double b2 = sxx + syy + kSsimC2;
      const double s = (t1 * t2) / (b1 * b2);
      out[i] += 0.5 * beta * (1.0 - s) / 3.0 +
                (1.0 - beta) * std::abs(x[i] - y[i]) / 3.0;
    }
  }
  return out;
}

}  // namespace

Raster refine_depth(const DepthDistribution& d, const Image& i_t,
                    const Image& i_prev, const RigidTransform& pose,
                    const CameraIntrinsics& k, const RefineConfig& cfg) {
  cfg.validate();
  d.validate();
  require_same_shape(d.mean, i_t.channel[0], "refine_depth");
  require_same_shape(i_t, i_prev, "refine_depth");

  const auto mult = hypothesis_multipliers(cfg);
  const auto depths = hypothesis_depths(d.mean, d.std, cfg);

  // Evaluation order: ascending |multiplier| so that strict improvement
  // keeps the more conservative hypothesis on ties.
  std::vector<std::size_t> order(mult.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (std::abs(mult[a]) != std::abs(mult[b])) {
      return std::abs(mult[a]) < std::abs(mult[b]);
    }
    return mult[a] < mult[b];
  });

  const TargetMoments tm = target_moments(i_t);
  Raster refined = d.mean;
  Raster best(d.width(), d.height(),
              std::numeric_limits<double>::infinity());

  // The unperturbed mean is the incumbent; a hypothesis replaces it only
  // with strictly lower energy, so full ties leave the mean unchanged.
  {
    const WarpResult warp = warp_from_depth(d.mean, pose, k, i_prev);
    const Raster energy = energy_against(i_t, tm, warp.warped, cfg.beta);
    for (int v = 0; v < d.height(); ++v) {
      for (int u = 0; u < d.width(); ++u) {
        if (warp.map.is_valid(u, v)) best(u, v) = energy(u, v);
      }
    }
  }

  for (const std::size_t idx : order) {
    const WarpResult warp = warp_from_depth(depths[idx], pose, k, i_prev);
    const Raster energy = energy_against(i_t, tm, warp.warped, cfg.beta);
    for (int v = 0; v < d.height(); ++v) {
      for (int u = 0; u < d.width(); ++u) {
        if (!warp.map.is_valid(u, v)) continue;
        if (energy(u, v) < best(u, v)) {
          best(u, v) = energy(u, v);
          refined(u, v) = depths[idx](u, v);
        }
      }
    }
  }
  return refined;
}

FlipResult flip_postprocess(const DepthDistribution& d,
                            const DepthDistribution& d_flipped_input) {
  require_same_shape(d.mean, d_flipped_input.mean, "flip_postprocess");
  const Raster unflipped = flip_horizontal(d_flipped_input.mean);
  FlipResult out;
  out.mean = Raster(d.width(), d.height());
  out.derived_std = Raster(d.width(), d.height());
  for (std::size_t i = 0; i < out.mean.size(); ++i) {
    out.mean[i] = 0.5 * (d.mean[i] + unflipped[i]);
    out.derived_std[i] = std::abs(d.mean[i] - unflipped[i]);
  }
  return out;
}

}  // namespace vdepth
