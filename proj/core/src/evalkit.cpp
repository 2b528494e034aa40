#include "vdepth/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace vdepth {

namespace {

bool pixel_valid(const ValidMask& mask, std::size_t i) {
  return mask.empty() || mask[i] != 0;
}

std::vector<std::size_t> eligible_pixels(const Raster& gt,
                                         const ValidMask& mask, double cap) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (pixel_valid(mask, i) && gt[i] > 0.0 && gt[i] < cap) idx.push_back(i);
  }
  return idx;
}

MetricReport metrics_on(const Raster& pred, const Raster& gt,
                        std::span<const std::size_t> idx) {
  if (idx.empty()) {
    throw std::domain_error("depth_metrics: no valid pixel after masking");
  }
  MetricReport r;
  double abs_rel = 0.0, sq_rel = 0.0, sq = 0.0, sq_log = 0.0;
  std::int64_t n1 = 0, n2 = 0, n3 = 0;
  for (const std::size_t i : idx) {
    const double g = gt[i], p = pred[i];
    const double err = g - p;
    abs_rel += std::abs(err) / g;
    sq_rel += err * err / g;
    sq += err * err;
    const double le = std::log(g) - std::log(p);
    sq_log += le * le;
    const double delta = std::max(g / p, p / g);
    if (delta < 1.25) ++n1;
    if (delta < 1.25 * 1.25) ++n2;
    if (delta < 1.25 * 1.25 * 1.25) ++n3;
  }
  const double n = static_cast<double>(idx.size());
  r.abs_rel = abs_rel / n;
  r.sq_rel = sq_rel / n;
  r.rmse = std::sqrt(sq / n);
  r.rmse_log = std::sqrt(sq_log / n);
  r.d1 = n1 / n;
  r.d2 = n2 / n;
  r.d3 = n3 / n;
  r.valid_count = static_cast<std::int64_t>(idx.size());
  return r;
}

}  // namespace

MetricReport depth_metrics(const Raster& pred, const Raster& gt,
                           const ValidMask& valid_mask, double cap) {
  require_same_shape(pred, gt, "depth_metrics");
  const auto idx = eligible_pixels(gt, valid_mask, cap);
  return metrics_on(pred, gt, idx);
}

double nll(const DepthDistribution& d, const Raster& gt,
           const ValidMask& valid_mask, double sigma_floor) {
  require_same_shape(d.mean, gt, "nll");
  constexpr double half_log_2pi = 0.9189385332046727;
  double acc = 0.0;
  std::int64_t n = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!pixel_valid(valid_mask, i)) continue;
    const double sigma = std::max(d.std[i], sigma_floor);
    const double err = gt[i] - d.mean[i];
    acc += half_log_2pi + std::log(sigma) + err * err / (2.0 * sigma * sigma);
    ++n;
  }
  if (n == 0) throw std::domain_error("nll: no valid pixel");
  return acc / static_cast<double>(n);
}

UniformOptResult uniform_opt_nll(const Raster& mean, const Raster& gt,
                                 const ValidMask& valid_mask,
                                 double sigma_floor) {
  require_same_shape(mean, gt, "uniform_opt_nll");
  double sq = 0.0;
  std::int64_t n = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!pixel_valid(valid_mask, i)) continue;
    const double err = gt[i] - mean[i];
    sq += err * err;
    ++n;
  }
  if (n == 0) throw std::domain_error("uniform_opt_nll: no valid pixel");
  UniformOptResult res;
  res.sigma = std::max(std::sqrt(sq / static_cast<double>(n)), sigma_floor);
  constexpr double half_log_2pi = 0.9189385332046727;
  res.nll = half_log_2pi + std::log(res.sigma) +
            sq / static_cast<double>(n) / (2.0 * res.sigma * res.sigma);
  return res;
}

RemovalCurve outlier_removal_curve(const DepthDistribution& d,
                                   const Raster& gt,
                                   const ValidMask& valid_mask,
                                   std::span<const double> percentages,
                                   double cap) {
  require_same_shape(d.mean, gt, "outlier_removal_curve");
  for (std::size_t i = 0; i + 1 < percentages.size(); ++i) {
    if (!(percentages[i] < percentages[i + 1])) {
      throw std::invalid_argument(
          "outlier_removal_curve: percentages must be strictly increasing");
    }
  }
  for (const double p : percentages) {
    if (p < 0.0 || p >= 100.0) {
      throw std::invalid_argument(
          "outlier_removal_curve: percentages must lie in [0, 100)");
    }
  }

  auto idx = eligible_pixels(gt, valid_mask, cap);
  // Decreasing sigma, ties broken by ascending pixel index; the sort is on
  // the eligible subset so ranks are well defined for any mask.
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) {
                     if (d.std[a] != d.std[b]) return d.std[a] > d.std[b];
                     return a < b;
                   });

  RemovalCurve curve;
  curve.percentages.assign(percentages.begin(), percentages.end());
  for (const double p : percentages) {
    const auto drop = static_cast<std::size_t>(
        std::floor(static_cast<double>(idx.size()) * p / 100.0));
    if (drop >= idx.size()) {
      throw std::domain_error(
          "outlier_removal_curve: removal leaves zero pixels at " +
          std::to_string(p) + "%");
    }
    std::vector<std::size_t> kept(idx.begin() + drop, idx.end());
    std::sort(kept.begin(), kept.end());
    curve.reports.push_back(metrics_on(d.mean, gt, kept));
  }
  return curve;
}

Raster median_scale(const Raster& pred, const Raster& gt,
                    const ValidMask& valid_mask, double cap) {
  require_same_shape(pred, gt, "median_scale");
  const auto idx = eligible_pixels(gt, valid_mask, cap);
  if (idx.empty()) throw std::domain_error("median_scale: no valid pixel");
  auto median_of = [&](const Raster& r) {
    std::vector<double> vals;
    vals.reserve(idx.size());
    for (const std::size_t i : idx) vals.push_back(r[i]);
    const std::size_t mid = vals.size() / 2;
    std::nth_element(vals.begin(), vals.begin() + mid, vals.end());
    return vals[mid];
  };
  const double scale = median_of(gt) / median_of(pred);
  Raster out = pred;
  for (auto& x : out) x *= scale;
  return out;
}

}  // namespace vdepth
