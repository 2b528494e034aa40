#pragma once

#include <Eigen/Core>
#include <span>
#include <vector>

#include "vdepth/depthdist.hpp"

namespace vdepth {

/// N x N matrix of squared Mahalanobis distances; entries finite and >= 0.
struct CostMatrix {
  Eigen::MatrixXd values;

  int size() const { return static_cast<int>(values.rows()); }
  void validate() const;
};

/// Entropic coupling with uniform 1/N marginals plus its transport value
/// and the marginal residuals after the last iteration.
struct TransportPlan {
  Eigen::MatrixXd coupling;
  double value = 0.0;
  double row_residual = 0.0;  // max_i |sum_j pi_ij - 1/N|
  double col_residual = 0.0;  // max_j |sum_i pi_ij - 1/N|
  int iterations = 0;
};

/// Regular pixel grid with intervals (n_c, n_r) and 1-based offsets
/// (m_c, m_r), 1 <= m_c <= n_c and 1 <= m_r <= n_r.
struct GridSpec {
  int n_c = 16;
  int n_r = 4;
  int m_c = 1;
  int m_r = 1;

  void validate() const;
};

struct SinkhornOptions {
  double epsilon = 1e-3;
  int iterations = 30;
  bool log_domain = true;
  /// When positive, iterate until both marginal residuals fall below this
  /// tolerance (up to max_iterations) instead of the fixed count.
  double residual_tol = 0.0;
  int max_iterations = 200000;
};

/// values[i][j] = mahalanobis_sq(sampled[i], target[j]). Lengths must match.
CostMatrix build_cost(std::span<const Eigen::Vector3d> sampled,
                      const GaussianCloud& target);

/// Alternating-scaling approximation of the optimal coupling between two
/// uniform discrete measures under cost c: pi = diag(a) G diag(b) with
/// G = exp(-c/eps). The log-domain path evaluates the same updates with
/// log-sum-exp and never forms G explicitly.
TransportPlan sinkhorn(const CostMatrix& c, const SinkhornOptions& opts);
TransportPlan sinkhorn(const CostMatrix& c, double epsilon, int iterations,
                       bool log_domain = true);

/// Transport value plus its exact gradient with respect to every cost
/// entry, obtained by reverse-mode differentiation through the unrolled
/// log-domain iterations.
struct SinkhornVjp {
  TransportPlan plan;
  Eigen::MatrixXd cost_grad;
};
SinkhornVjp sinkhorn_value_vjp(const CostMatrix& c,
                               const SinkhornOptions& opts);

/// Exact value of the relaxed problem at uniform marginals: an optimal
/// vertex is a permutation matrix scaled by 1/N, so this enumerates all
/// permutations. Refuses N > 10.
double exact_ot(const CostMatrix& c);

/// Pixels at (m_c - 1 + i * n_c, m_r - 1 + j * n_r) for every in-bounds
/// i, j >= 0, row-major over the grid (v outer, u inner).
std::vector<PixelCoord> grid_pixels(int width, int height,
                                    const GridSpec& spec);

/// Sum over frames of the entropic transport value between sampled points
/// and target clouds (costs are squared Mahalanobis distances).
double mw_loss(std::span<const std::vector<Eigen::Vector3d>> sampled_clouds,
               std::span<const GaussianCloud> target_clouds,
               const SinkhornOptions& opts);

}  // namespace vdepth
