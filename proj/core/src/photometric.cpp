#include "vdepth/photometric.hpp"

#include <cmath>
#include <stdexcept>

#include "vdepth/detail/raster_ops.hpp"

namespace vdepth {

using detail::avgpool3;
using detail::avgpool3_adjoint_add;
using detail::bilinear_taps;
using detail::hadamard;

namespace {

constexpr double kMinProjectZ = 1e-8;

struct SsimMoments {
  Raster mu_x, mu_y, sxx, syy, sxy;
};

SsimMoments ssim_moments(const Raster& x, const Raster& y) {
  SsimMoments m;
  Raster raw_xx, raw_xy_unused;
  detail::pool3_pair(x, x, m.mu_x, raw_xx, raw_xy_unused);
  Raster raw_yy, raw_xy;
  detail::pool3_pair(y, x, m.mu_y, raw_yy, raw_xy);
  m.sxx = std::move(raw_xx);
  m.syy = std::move(raw_yy);
  m.sxy = std::move(raw_xy);
  for (std::size_t i = 0; i < m.sxx.size(); ++i) {
    m.sxx[i] -= m.mu_x[i] * m.mu_x[i];
    m.syy[i] -= m.mu_y[i] * m.mu_y[i];
    m.sxy[i] -= m.mu_x[i] * m.mu_y[i];
  }
  return m;
}

inline double ssim_value(const SsimMoments& m, std::size_t i) {
  const double t1 = 2.0 * m.mu_x[i] * m.mu_y[i] + kSsimC1;
  const double t2 = 2.0 * m.sxy[i] + kSsimC2;
  const double b1 = m.mu_x[i] * m.mu_x[i] + m.mu_y[i] * m.mu_y[i] + kSsimC1;
  const double b2 = m.sxx[i] + m.syy[i] + kSsimC2;
  return (t1 * t2) / (b1 * b2);
}

}  // namespace

PixelMap project_map(std::span<const Eigen::Vector3d> cloud,
                     const CameraIntrinsics& k,
                     std::span<const PixelCoord> pixels) {
  if (cloud.size() != pixels.size()) {
    throw std::invalid_argument("project_map: cloud/pixel count mismatch");
  }
  PixelMap map;
  map.u_hat = Raster(k.width, k.height, 0.0);
  map.v_hat = Raster(k.width, k.height, 0.0);
  map.valid.assign(static_cast<std::size_t>(k.width) * k.height, 0);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& p = pixels[i];
    const auto& q = cloud[i];
    if (!map.u_hat.contains(p.u, p.v)) {
      throw std::invalid_argument("project_map: target pixel outside raster");
    }
    if (q.z() <= kMinProjectZ) continue;  // stays invalid
    map.u_hat(p.u, p.v) = k.fx * q.x() / q.z() + k.cx;
    map.v_hat(p.u, p.v) = k.fy * q.y() / q.z() + k.cy;
    map.valid[Raster::flat_index(p.u, p.v, k.width)] = 1;
  }
  return map;
}

Image bilinear_sample(const Image& img, const PixelMap& map) {
  const int w = img.width(), h = img.height();
  Image out(map.width(), map.height(), 0.0);
  for (int v = 0; v < map.height(); ++v) {
    for (int u = 0; u < map.width(); ++u) {
      if (!map.is_valid(u, v)) continue;
      const auto t = bilinear_taps(map.u_hat(u, v), map.v_hat(u, v), w, h);
      for (int c = 0; c < 3; ++c) {
        const Raster& src = img.channel[c];
        // Nested lerp: reproduces constant images bit-exactly.
        const double r0 =
            src(t.x0, t.y0) + t.a * (src(t.x1, t.y0) - src(t.x0, t.y0));
        const double r1 =
            src(t.x0, t.y1) + t.a * (src(t.x1, t.y1) - src(t.x0, t.y1));
        out.channel[c](u, v) = r0 + t.b * (r1 - r0);
      }
    }
  }
  return out;
}

Raster ssim(const Image& a, const Image& b) {
  require_same_shape(a, b, "ssim");
  Raster out(a.width(), a.height(), 0.0);
  for (int c = 0; c < 3; ++c) {
    const SsimMoments m = ssim_moments(a.channel[c], b.channel[c]);
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] += ssim_value(m, i) / 3.0;
    }
  }
  return out;
}

Raster photometric_energy(const Image& i_t, const Image& i_hat, double beta) {
  require_same_shape(i_t, i_hat, "photometric_energy");
  Raster out = ssim(i_t, i_hat);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = 0.5 * beta * (1.0 - out[i]);
  }
  for (int c = 0; c < 3; ++c) {
    const Raster& x = i_t.channel[c];
    const Raster& y = i_hat.channel[c];
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] += (1.0 - beta) * std::abs(x[i] - y[i]) / 3.0;
    }
  }
  return out;
}

Raster l2_energy(const Image& i_t, const Image& i_hat) {
  require_same_shape(i_t, i_hat, "l2_energy");
  Raster out(i_t.width(), i_t.height(), 0.0);
  for (int c = 0; c < 3; ++c) {
    const Raster& x = i_t.channel[c];
    const Raster& y = i_hat.channel[c];
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double d = x[i] - y[i];
      out[i] += d * d / 3.0;
    }
  }
  return out;
}

MaskedLoss min_reprojection_automask(const Raster& losses_prev,
                                     const Raster& losses_next,
                                     const Raster& identity_prev,
                                     const Raster& identity_next) {
  require_same_shape(losses_prev, losses_next, "min_reprojection_automask");
  require_same_shape(losses_prev, identity_prev, "min_reprojection_automask");
  require_same_shape(losses_prev, identity_next, "min_reprojection_automask");
  MaskedLoss out;
  out.loss = Raster(losses_prev.width(), losses_prev.height(), 0.0);
  out.mask.assign(losses_prev.size(), 0);
  for (std::size_t i = 0; i < out.loss.size(); ++i) {
    const double reproj = std::min(losses_prev[i], losses_next[i]);
    const double identity = std::min(identity_prev[i], identity_next[i]);
    if (identity > reproj) {
      out.loss[i] = reproj;
      out.mask[i] = 1;
    }
  }
  return out;
}

double smooth_loss(const DepthDistribution& d, const Image& img) {
  require_same_shape(d.mean, img.channel[0], "smooth_loss");
  const int w = d.width(), h = d.height();
  Raster disp(w, h);
  for (std::size_t i = 0; i < disp.size(); ++i) disp[i] = 1.0 / d.mean[i];
  const double m = disp.mean();

  double loss_x = 0.0, loss_y = 0.0;
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u + 1 < w; ++u) {
      double ig = 0.0;
      for (int c = 0; c < 3; ++c) {
        ig += std::abs(img.channel[c](u + 1, v) - img.channel[c](u, v)) / 3.0;
      }
      loss_x += std::abs(disp(u + 1, v) - disp(u, v)) / m * std::exp(-ig);
    }
  }
  for (int v = 0; v + 1 < h; ++v) {
    for (int u = 0; u < w; ++u) {
      double ig = 0.0;
      for (int c = 0; c < 3; ++c) {
        ig += std::abs(img.channel[c](u, v + 1) - img.channel[c](u, v)) / 3.0;
      }
      loss_y += std::abs(disp(u, v + 1) - disp(u, v)) / m * std::exp(-ig);
    }
  }
  double total = 0.0;
  if (w > 1) total += loss_x / (static_cast<double>(w - 1) * h);
  if (h > 1) total += loss_y / (static_cast<double>(w) * (h - 1));
  return total;
}

double std_reg_loss(const DepthDistribution& d) { return d.std.mean(); }

WarpResult warp_from_depth(const Raster& depth, const RigidTransform& pose,
                           const CameraIntrinsics& k, const Image& source) {
  const int w = depth.width(), h = depth.height();
  WarpResult res;
  res.map.u_hat = Raster(w, h, 0.0);
  res.map.v_hat = Raster(w, h, 0.0);
  res.map.valid.assign(depth.size(), 0);
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      const double z = depth(u, v);
      if (z <= 0.0) continue;
      const Eigen::Vector3d y = pose.apply(z * k.ray(u, v));
      if (y.z() <= kMinProjectZ) continue;
      res.map.u_hat(u, v) = k.fx * y.x() / y.z() + k.cx;
      res.map.v_hat(u, v) = k.fy * y.y() / y.z() + k.cy;
      res.map.valid[Raster::flat_index(u, v, w)] = 1;
    }
  }
  res.warped = bilinear_sample(source, res.map);
  return res;
}

WarpGrad warp_backward(const Raster& depth, const RigidTransform& pose,
                       const CameraIntrinsics& k, const Image& source,
                       const Image& grad_warped) {
  const int w = depth.width(), h = depth.height();
  const int sw = source.width(), sh = source.height();
  WarpGrad grad;
  grad.d_depth = Raster(w, h, 0.0);
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      const double z = depth(u, v);
      if (z <= 0.0) continue;
      const Eigen::Vector3d ray = k.ray(u, v);
      const Eigen::Vector3d x = z * ray;
      const Eigen::Vector3d y = pose.apply(x);
      if (y.z() <= kMinProjectZ) continue;
      const double u_hat = k.fx * y.x() / y.z() + k.cx;
      const double v_hat = k.fy * y.y() / y.z() + k.cy;
      const auto t = bilinear_taps(u_hat, v_hat, sw, sh);

      double g_u = 0.0, g_v = 0.0;
      for (int c = 0; c < 3; ++c) {
        const double g = grad_warped.channel[c](u, v);
        if (g == 0.0) continue;
        const Raster& src = source.channel[c];
        const double i00 = src(t.x0, t.y0), i10 = src(t.x1, t.y0);
        const double i01 = src(t.x0, t.y1), i11 = src(t.x1, t.y1);
        g_u += g * ((1 - t.b) * (i10 - i00) + t.b * (i11 - i01));
        g_v += g * ((1 - t.a) * (i01 - i00) + t.a * (i11 - i10));
      }
      if (t.sat_u) g_u = 0.0;
      if (t.sat_v) g_v = 0.0;
      if (g_u == 0.0 && g_v == 0.0) continue;

      Eigen::Vector3d g_y;
      g_y.x() = g_u * k.fx / y.z();
      g_y.y() = g_v * k.fy / y.z();
      g_y.z() = -(g_u * k.fx * y.x() + g_v * k.fy * y.y()) / (y.z() * y.z());

      grad.d_translation += g_y;
      grad.d_rotation += g_y * x.transpose();
      const Eigen::Vector3d g_x = pose.rotation.transpose() * g_y;
      grad.d_depth(u, v) = ray.dot(g_x);
    }
  }
  return grad;
}

Image photometric_energy_backward(const Image& i_t, const Image& i_hat,
                                  double beta, const Raster& grad_energy) {
  require_same_shape(i_t, i_hat, "photometric_energy_backward");
  const int w = i_t.width(), h = i_t.height();
  Image grad(w, h, 0.0);
  for (int c = 0; c < 3; ++c) {
    const Raster& x = i_t.channel[c];
    const Raster& y = i_hat.channel[c];
    Raster& gy = grad.channel[c];

    // L1 path.
    for (std::size_t i = 0; i < gy.size(); ++i) {
      const double diff = y[i] - x[i];
      const double s = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
      gy[i] += grad_energy[i] * (1.0 - beta) / 3.0 * s;
    }

    // SSIM path: energy contributes -beta/2 * 1/3 per channel value.
    const SsimMoments m = ssim_moments(x, y);
    Raster g_mu_y(w, h, 0.0), g_pyy(w, h, 0.0), g_pxy(w, h, 0.0);
    for (std::size_t i = 0; i < g_mu_y.size(); ++i) {
      const double gs = grad_energy[i] * (-0.5 * beta) / 3.0;
      if (gs == 0.0) continue;
      const double t1 = 2.0 * m.mu_x[i] * m.mu_y[i] + kSsimC1;
      const double t2 = 2.0 * m.sxy[i] + kSsimC2;
      const double b1 =
          m.mu_x[i] * m.mu_x[i] + m.mu_y[i] * m.mu_y[i] + kSsimC1;
      const double b2 = m.sxx[i] + m.syy[i] + kSsimC2;
      const double s = (t1 * t2) / (b1 * b2);
      const double g_t1 = gs * t2 / (b1 * b2);
      const double g_t2 = gs * t1 / (b1 * b2);
      const double g_b1 = -gs * s / b1;
      const double g_b2 = -gs * s / b2;
      const double g_sxy = 2.0 * g_t2;
      const double g_syy = g_b2;
      // mu_y enters t1, b1 and the centered moments.
      g_mu_y[i] = 2.0 * m.mu_x[i] * g_t1 + 2.0 * m.mu_y[i] * g_b1 -
                  m.mu_x[i] * g_sxy - 2.0 * m.mu_y[i] * g_syy;
      g_pyy[i] = g_syy;
      g_pxy[i] = g_sxy;
    }
    Raster scatter_mu(w, h, 0.0), scatter_yy(w, h, 0.0), scatter_xy(w, h, 0.0);
    detail::pool3_adjoint_add3(g_mu_y, g_pyy, g_pxy, scatter_mu, scatter_yy,
                               scatter_xy);
    for (std::size_t i = 0; i < gy.size(); ++i) {
      gy[i] += scatter_mu[i] + scatter_yy[i] * 2.0 * y[i] + scatter_xy[i] * x[i];
    }
  }
  return grad;
}

Image l2_energy_backward(const Image& i_t, const Image& i_hat,
                         const Raster& grad_energy) {
  require_same_shape(i_t, i_hat, "l2_energy_backward");
  Image grad(i_t.width(), i_t.height(), 0.0);
  for (int c = 0; c < 3; ++c) {
    const Raster& x = i_t.channel[c];
    const Raster& y = i_hat.channel[c];
    Raster& gy = grad.channel[c];
    for (std::size_t i = 0; i < gy.size(); ++i) {
      gy[i] = grad_energy[i] * 2.0 * (y[i] - x[i]) / 3.0;
    }
  }
  return grad;
}

Raster smooth_loss_grad(const DepthDistribution& d, const Image& img) {
  require_same_shape(d.mean, img.channel[0], "smooth_loss_grad");
  const int w = d.width(), h = d.height();
  Raster disp(w, h);
  for (std::size_t i = 0; i < disp.size(); ++i) disp[i] = 1.0 / d.mean[i];
  const double m = disp.mean();
  const double nx = static_cast<double>(w - 1) * h;
  const double ny = static_cast<double>(w) * (h - 1);

  Raster g_dstar(w, h, 0.0);
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u + 1 < w; ++u) {
      double ig = 0.0;
      for (int c = 0; c < 3; ++c) {
        ig += std::abs(img.channel[c](u + 1, v) - img.channel[c](u, v)) / 3.0;
      }
      const double diff = (disp(u + 1, v) - disp(u, v)) / m;
      const double s = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
      const double wgt = std::exp(-ig) * s / nx;
      g_dstar(u + 1, v) += wgt;
      g_dstar(u, v) -= wgt;
    }
  }
  for (int v = 0; v + 1 < h; ++v) {
    for (int u = 0; u < w; ++u) {
      double ig = 0.0;
      for (int c = 0; c < 3; ++c) {
        ig += std::abs(img.channel[c](u, v + 1) - img.channel[c](u, v)) / 3.0;
      }
      const double diff = (disp(u, v + 1) - disp(u, v)) / m;
      const double s = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
      const double wgt = std::exp(-ig) * s / ny;
      g_dstar(u, v + 1) += wgt;
      g_dstar(u, v) -= wgt;
    }
  }

  // d* = disp / mean(disp): quotient rule couples every pixel through m.
  double inner = 0.0;
  for (std::size_t i = 0; i < disp.size(); ++i) inner += g_dstar[i] * disp[i];
  const double n = static_cast<double>(disp.size());
  Raster grad(w, h, 0.0);
  for (std::size_t i = 0; i < grad.size(); ++i) {
    const double g_disp = g_dstar[i] / m - inner / (n * m * m);
    grad[i] = -g_disp / (d.mean[i] * d.mean[i]);
  }
  return grad;
}

}  // namespace vdepth
