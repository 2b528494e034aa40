#include "vdepth/transport.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

namespace vdepth {

void CostMatrix::validate() const {
  if (values.rows() != values.cols() || values.rows() < 1) {
    throw std::invalid_argument("CostMatrix: must be square and nonempty");
  }
  for (Eigen::Index j = 0; j < values.cols(); ++j) {
    for (Eigen::Index i = 0; i < values.rows(); ++i) {
      const double x = values(i, j);
      if (!std::isfinite(x) || x < 0.0) {
        throw std::invalid_argument(
            "CostMatrix: entries must be finite and nonnegative, got " +
            std::to_string(x));
      }
    }
  }
}

void GridSpec::validate() const {
  if (n_c < 1 || n_r < 1) {
    throw std::invalid_argument("GridSpec: intervals must be >= 1");
  }
  if (m_c < 1 || m_c > n_c || m_r < 1 || m_r > n_r) {
    throw std::invalid_argument(
        "GridSpec: offsets must satisfy 1 <= m_c <= n_c and 1 <= m_r <= n_r");
  }
}

CostMatrix build_cost(std::span<const Eigen::Vector3d> sampled,
                      const GaussianCloud& target) {
  if (sampled.size() != target.size() || sampled.empty()) {
    throw std::invalid_argument("build_cost: need equal nonzero counts, got " +
                                std::to_string(sampled.size()) + " vs " +
                                std::to_string(target.size()));
  }
  const int n = static_cast<int>(sampled.size());
  CostMatrix c;
  c.values.resize(n, n);
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < n; ++i) {
      c.values(i, j) = mahalanobis_sq(sampled[i], target.gaussians[j]);
    }
  }
  return c;
}

namespace {

double lse(const Eigen::VectorXd& x) {
  const double m = x.maxCoeff();
  return m + std::log((x.array() - m).exp().sum());
}

// Row/column log-sum-exp of kernel + potential, allocation free. The
// kernel is column-major, so rows stride and columns are contiguous.
double lse_row(const Eigen::MatrixXd& k, Eigen::Index i,
               const Eigen::VectorXd& g) {
  const Eigen::Index n = k.cols();
  double m = -std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < n; ++j) m = std::max(m, k(i, j) + g(j));
  double acc = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) acc += std::exp(k(i, j) + g(j) - m);
  return m + std::log(acc);
}

double lse_col(const Eigen::MatrixXd& k, Eigen::Index j,
               const Eigen::VectorXd& f) {
  const Eigen::Index n = k.rows();
  const double* col = k.data() + j * n;
  double m = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < n; ++i) m = std::max(m, col[i] + f(i));
  double acc = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) acc += std::exp(col[i] + f(i) - m);
  return m + std::log(acc);
}

struct LogSinkhornTape {
  // Potentials after each iteration; f[k], g[k] for k = 1..n, g[0] = 0.
  std::vector<Eigen::VectorXd> f, g;
  int iterations = 0;
};

void plan_from_potentials(const Eigen::MatrixXd& log_kernel,
                          const Eigen::VectorXd& f, const Eigen::VectorXd& g,
                          Eigen::MatrixXd& plan) {
  const Eigen::Index n = log_kernel.rows();
  plan.resize(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) {
      plan(i, j) = std::exp(f(i) + log_kernel(i, j) + g(j));
    }
  }
}

void marginal_residuals(const Eigen::MatrixXd& plan, double& row_res,
                        double& col_res) {
  const double target = 1.0 / static_cast<double>(plan.rows());
  row_res = (plan.rowwise().sum().array() - target).abs().maxCoeff();
  col_res = (plan.colwise().sum().array() - target).abs().maxCoeff();
}

// Damped Newton on the dual potentials, polishing toward the fixed point
// the alternating scalings converge to. At small epsilon the scalings only
// close the marginal gap at an O(1/iteration) rate, far too slow for tight
// tolerances; Newton converges quadratically from a scaling warm start.
bool newton_polish(const Eigen::MatrixXd& log_kernel, Eigen::VectorXd& f,
                   Eigen::VectorXd& g, double tol, int max_steps,
                   int& steps_used) {
  const Eigen::Index n = log_kernel.rows();
  const double target = 1.0 / static_cast<double>(n);
  Eigen::MatrixXd plan(n, n);

  auto residual = [&](const Eigen::VectorXd& fv, const Eigen::VectorXd& gv,
                      Eigen::VectorXd& row_err, Eigen::VectorXd& col_err) {
    for (Eigen::Index j = 0; j < n; ++j) {
      for (Eigen::Index i = 0; i < n; ++i) {
        plan(i, j) = std::exp(fv(i) + log_kernel(i, j) + gv(j));
      }
    }
    row_err = plan.rowwise().sum().array() - target;
    col_err = plan.colwise().sum().transpose().array() - target;
    return std::max(row_err.cwiseAbs().maxCoeff(),
                    col_err.cwiseAbs().maxCoeff());
  };

  Eigen::VectorXd row_err(n), col_err(n);
  double res = residual(f, g, row_err, col_err);
  for (int step = 0; step < max_steps; ++step) {
    if (res < tol) return true;
    Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(2 * n, 2 * n);
    jac.topLeftCorner(n, n) =
        (row_err.array() + target).matrix().asDiagonal();
    jac.topRightCorner(n, n) = plan;
    jac.bottomLeftCorner(n, n) = plan.transpose();
    jac.bottomRightCorner(n, n) =
        (col_err.array() + target).matrix().asDiagonal();
    Eigen::VectorXd rhs(2 * n);
    rhs << -row_err, -col_err;
    // The gauge direction (1, -1) is in the null space; the rank-revealing
    // solve picks a valid representative.
    const Eigen::VectorXd delta = jac.colPivHouseholderQr().solve(rhs);

    bool accepted = false;
    for (double t = 1.0; t > 1e-7; t *= 0.5) {
      Eigen::VectorXd f2 = f + t * delta.head(n);
      Eigen::VectorXd g2 = g + t * delta.tail(n);
      Eigen::VectorXd r2(n), c2(n);
      const double res2 = residual(f2, g2, r2, c2);
      if (res2 < res) {
        f = std::move(f2);
        g = std::move(g2);
        row_err = r2;
        col_err = c2;
        res = res2;
        accepted = true;
        break;
      }
    }
    ++steps_used;
    if (!accepted) return res < tol;
  }
  return res < tol;
}

TransportPlan run_log_domain(const CostMatrix& c, const SinkhornOptions& opts,
                             LogSinkhornTape* tape) {
  const Eigen::Index n = c.values.rows();
  const double log_inv_n = -std::log(static_cast<double>(n));
  const Eigen::MatrixXd log_kernel = -c.values / opts.epsilon;

  Eigen::VectorXd f = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(n);
  if (tape) {
    tape->f.clear();
    tape->g.clear();
    tape->g.push_back(g);  // g[0]
  }

  TransportPlan plan;
  const bool adaptive = opts.residual_tol > 0.0;
  const int limit = adaptive ? opts.max_iterations : opts.iterations;
  int it = 0;
  bool converged = false;
  while (it < limit) {
    ++it;
    for (Eigen::Index i = 0; i < n; ++i) {
      f(i) = log_inv_n - lse_row(log_kernel, i, g);
    }
    for (Eigen::Index j = 0; j < n; ++j) {
      g(j) = log_inv_n - lse_col(log_kernel, j, f);
    }
    if (tape) {
      tape->f.push_back(f);
      tape->g.push_back(g);
    }
    if (adaptive) {
      plan_from_potentials(log_kernel, f, g, plan.coupling);
      marginal_residuals(plan.coupling, plan.row_residual, plan.col_residual);
      if (std::max(plan.row_residual, plan.col_residual) < opts.residual_tol) {
        converged = true;
        break;
      }
      // Scaling updates approach the fixed point sublinearly once the
      // assignment structure has settled; hand over to Newton.
      if (!tape && it >= 50 && it % 50 == 0) {
        int newton_steps = 0;
        if (newton_polish(log_kernel, f, g, opts.residual_tol, 100,
                          newton_steps)) {
          it += newton_steps;
          converged = true;
          break;
        }
        it += newton_steps;
      }
    }
  }
  plan_from_potentials(log_kernel, f, g, plan.coupling);
  marginal_residuals(plan.coupling, plan.row_residual, plan.col_residual);
  (void)converged;
  plan.iterations = it;
  plan.value = (plan.coupling.array() * c.values.array()).sum();
  if (tape) tape->iterations = it;
  return plan;
}

TransportPlan run_linear_domain(const CostMatrix& c,
                                const SinkhornOptions& opts) {
  const Eigen::Index n = c.values.rows();
  const double inv_n = 1.0 / static_cast<double>(n);
  // Scalar std::exp so extreme arguments underflow to an honest zero
  // (vectorized exp clamps them to a denormal, masking dead kernels).
  Eigen::MatrixXd kernel(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) {
      kernel(i, j) = std::exp(-c.values(i, j) / opts.epsilon);
    }
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (kernel.row(i).sum() <= 0.0 || kernel.col(i).sum() <= 0.0) {
      throw std::runtime_error(
          "sinkhorn: kernel exp(-cost/epsilon) underflowed in the linear "
          "domain; use log_domain=true");
    }
  }

  Eigen::VectorXd a = Eigen::VectorXd::Ones(n);
  Eigen::VectorXd b = Eigen::VectorXd::Ones(n);
  TransportPlan plan;
  const bool adaptive = opts.residual_tol > 0.0;
  const int limit = adaptive ? opts.max_iterations : opts.iterations;
  int it = 0;
  while (it < limit) {
    ++it;
    a = inv_n * (kernel * b).cwiseInverse();
    b = inv_n * (kernel.transpose() * a).cwiseInverse();
    if (!a.allFinite() || !b.allFinite()) {
      throw std::runtime_error(
          "sinkhorn: scaling over/underflowed in the linear domain; "
          "use log_domain=true");
    }
    if (adaptive) {
      plan.coupling = a.asDiagonal() * kernel * b.asDiagonal();
      marginal_residuals(plan.coupling, plan.row_residual, plan.col_residual);
      if (std::max(plan.row_residual, plan.col_residual) < opts.residual_tol) {
        break;
      }
    }
  }
  if (!adaptive) {
    plan.coupling = a.asDiagonal() * kernel * b.asDiagonal();
    marginal_residuals(plan.coupling, plan.row_residual, plan.col_residual);
  }
  plan.iterations = it;
  plan.value = (plan.coupling.array() * c.values.array()).sum();
  return plan;
}

}  // namespace

TransportPlan sinkhorn(const CostMatrix& c, const SinkhornOptions& opts) {
  c.validate();
  if (!(opts.epsilon > 0.0)) {
    throw std::invalid_argument("sinkhorn: epsilon must be positive");
  }
  if (opts.iterations < 1 && opts.residual_tol <= 0.0) {
    throw std::invalid_argument("sinkhorn: need at least one iteration");
  }
  return opts.log_domain ? run_log_domain(c, opts, nullptr)
                         : run_linear_domain(c, opts);
}

TransportPlan sinkhorn(const CostMatrix& c, double epsilon, int iterations,
                       bool log_domain) {
  SinkhornOptions opts;
  opts.epsilon = epsilon;
  opts.iterations = iterations;
  opts.log_domain = log_domain;
  return sinkhorn(c, opts);
}

SinkhornVjp sinkhorn_value_vjp(const CostMatrix& c,
                               const SinkhornOptions& opts) {
  c.validate();
  if (!(opts.epsilon > 0.0)) {
    throw std::invalid_argument("sinkhorn_value_vjp: epsilon must be positive");
  }
  if (opts.residual_tol > 0.0) {
    throw std::invalid_argument(
        "sinkhorn_value_vjp: differentiates the unrolled fixed-count "
        "iterations; residual-based stopping is not supported");
  }
  LogSinkhornTape tape;
  SinkhornVjp out;
  out.plan = run_log_domain(c, opts, &tape);

  const Eigen::Index n = c.values.rows();
  const Eigen::MatrixXd log_kernel = -c.values / opts.epsilon;
  const Eigen::MatrixXd& pi = out.plan.coupling;

  // Adjoints seeded from value = sum_ij exp(f_i + K_ij + g_j) * cost_ij.
  Eigen::MatrixXd pid = pi.cwiseProduct(c.values);
  Eigen::MatrixXd kernel_bar = pid;
  Eigen::VectorXd f_bar = pid.rowwise().sum();
  Eigen::VectorXd g_bar = pid.colwise().sum();
  out.cost_grad = pi;

  // Walk the alternating updates backwards. Each update is an affine shift
  // of a log-sum-exp, whose adjoint distributes along softmax weights.
  Eigen::VectorXd f_add(n), g_next(n), scratch(n);
  for (int k = tape.iterations; k >= 1; --k) {
    const Eigen::VectorXd& f_k = tape.f[static_cast<std::size_t>(k) - 1];
    const Eigen::VectorXd& g_prev = tape.g[static_cast<std::size_t>(k) - 1];
    // g_j = log(1/N) - LSE_i(K_ij + f_i); adjoint spreads along softmax.
    f_add.setZero();
    for (Eigen::Index j = 0; j < n; ++j) {
      const double gb = g_bar(j);
      const double* col = log_kernel.data() + j * n;
      double m = -std::numeric_limits<double>::infinity();
      for (Eigen::Index i = 0; i < n; ++i) m = std::max(m, col[i] + f_k(i));
      double acc = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        scratch(i) = std::exp(col[i] + f_k(i) - m);
        acc += scratch(i);
      }
      const double scale = -gb / acc;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double contrib = scale * scratch(i);
        kernel_bar(i, j) += contrib;
        f_add(i) += contrib;
      }
    }
    f_bar += f_add;
    // f_i = log(1/N) - LSE_j(K_ij + g_prev_j)
    g_next.setZero();
    for (Eigen::Index i = 0; i < n; ++i) {
      const double fb = f_bar(i);
      double m = -std::numeric_limits<double>::infinity();
      for (Eigen::Index j = 0; j < n; ++j) {
        m = std::max(m, log_kernel(i, j) + g_prev(j));
      }
      double acc = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) {
        scratch(j) = std::exp(log_kernel(i, j) + g_prev(j) - m);
        acc += scratch(j);
      }
      const double scale = -fb / acc;
      for (Eigen::Index j = 0; j < n; ++j) {
        const double contrib = scale * scratch(j);
        kernel_bar(i, j) += contrib;
        g_next(j) += contrib;
      }
    }
    g_bar = g_next;
    f_bar.setZero();
  }
  // K = -cost / epsilon.
  out.cost_grad -= kernel_bar / opts.epsilon;
  return out;
}

double exact_ot(const CostMatrix& c) {
  c.validate();
  const int n = c.size();
  if (n > 10) {
    throw std::invalid_argument(
        "exact_ot: refusing N > 10 (factorial enumeration), got N = " +
        std::to_string(n));
  }
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double total = 0.0;
    for (int i = 0; i < n; ++i) total += c.values(i, perm[i]);
    best = std::min(best, total);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best / static_cast<double>(n);
}

std::vector<PixelCoord> grid_pixels(int width, int height,
                                    const GridSpec& spec) {
  spec.validate();
  if (width < spec.n_c || height < spec.n_r) {
    throw std::invalid_argument("grid_pixels: raster smaller than one grid cell");
  }
  std::vector<PixelCoord> pixels;
  for (int v = spec.m_r - 1; v < height; v += spec.n_r) {
    for (int u = spec.m_c - 1; u < width; u += spec.n_c) {
      pixels.push_back({u, v});
    }
  }
  return pixels;
}

double mw_loss(std::span<const std::vector<Eigen::Vector3d>> sampled_clouds,
               std::span<const GaussianCloud> target_clouds,
               const SinkhornOptions& opts) {
  if (sampled_clouds.size() != target_clouds.size()) {
    throw std::invalid_argument("mw_loss: frame count mismatch");
  }
  double total = 0.0;
  for (std::size_t t = 0; t < sampled_clouds.size(); ++t) {
    const CostMatrix c = build_cost(sampled_clouds[t], target_clouds[t]);
    total += sinkhorn(c, opts).value;
  }
  return total;
}

}  // namespace vdepth
