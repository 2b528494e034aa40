#pragma once

#include <algorithm>
#include <cmath>

#include "vdepth/raster.hpp"

namespace vdepth::detail {

// reflect-101 index: -1 -> 1, n -> n-2. Assumes n >= 2 or i already valid.
inline int reflect(int i, int n) {
  if (i < 0) return -i;
  if (i >= n) return 2 * n - 2 - i;
  return i;
}

// 3x3 mean pooling with reflected borders.
inline Raster avgpool3(const Raster& x) {
  const int w = x.width(), h = x.height();
  Raster out(w, h);
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      double acc = 0.0;
      for (int dv = -1; dv <= 1; ++dv) {
        for (int du = -1; du <= 1; ++du) {
          acc += x(reflect(u + du, w), reflect(v + dv, h));
        }
      }
      out(u, v) = acc / 9.0;
    }
  }
  return out;
}

// Adjoint of avgpool3: scatter-add along the same taps.
inline void avgpool3_adjoint_add(const Raster& grad, Raster& out) {
  const int w = grad.width(), h = grad.height();
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      const double g = grad(u, v) / 9.0;
      for (int dv = -1; dv <= 1; ++dv) {
        for (int du = -1; du <= 1; ++du) {
          out(reflect(u + du, w), reflect(v + dv, h)) += g;
        }
      }
    }
  }
}

inline Raster hadamard(const Raster& a, const Raster& b) {
  Raster out(a.width(), a.height());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

// Fused 3x3 mean pools of (y, y*y, x*y) in a single traversal; equals
// avgpool3 applied to each product separately.
inline void pool3_pair(const Raster& y, const Raster& x, Raster& mean_y,
                       Raster& raw_yy, Raster& raw_xy) {
  const int w = y.width(), h = y.height();
  mean_y = Raster(w, h);
  raw_yy = Raster(w, h);
  raw_xy = Raster(w, h);
  for (int v = 0; v < h; ++v) {
    const int vs[3] = {reflect(v - 1, h), v, reflect(v + 1, h)};
    for (int u = 0; u < w; ++u) {
      const int us[3] = {reflect(u - 1, w), u, reflect(u + 1, w)};
      double sy = 0.0, syy = 0.0, sxy = 0.0;
      for (const int vv : vs) {
        for (const int uu : us) {
          const double yv = y(uu, vv);
          sy += yv;
          syy += yv * yv;
          sxy += x(uu, vv) * yv;
        }
      }
      mean_y(u, v) = sy / 9.0;
      raw_yy(u, v) = syy / 9.0;
      raw_xy(u, v) = sxy / 9.0;
    }
  }
}

// Fused adjoint of three avgpool3 scatters.
inline void pool3_adjoint_add3(const Raster& g_a, const Raster& g_b,
                               const Raster& g_c, Raster& out_a,
                               Raster& out_b, Raster& out_c) {
  const int w = g_a.width(), h = g_a.height();
  for (int v = 0; v < h; ++v) {
    const int vs[3] = {reflect(v - 1, h), v, reflect(v + 1, h)};
    for (int u = 0; u < w; ++u) {
      const int us[3] = {reflect(u - 1, w), u, reflect(u + 1, w)};
      const double ga = g_a(u, v) / 9.0;
      const double gb = g_b(u, v) / 9.0;
      const double gc = g_c(u, v) / 9.0;
      for (const int vv : vs) {
        for (const int uu : us) {
          out_a(uu, vv) += ga;
          out_b(uu, vv) += gb;
          out_c(uu, vv) += gc;
        }
      }
    }
  }
}

// Interpolation stencil for a clamped fractional coordinate.
struct BilinearTaps {
  int x0, x1, y0, y1;
  double a, b;        // fractional weights along u and v
  bool sat_u, sat_v;  // clamp saturated (gradient w.r.t. the coordinate is 0)
};

inline BilinearTaps bilinear_taps(double u_hat, double v_hat, int w, int h) {
  BilinearTaps t;
  t.sat_u = u_hat < 0.0 || u_hat > w - 1.0;
  t.sat_v = v_hat < 0.0 || v_hat > h - 1.0;
  const double uc = std::clamp(u_hat, 0.0, static_cast<double>(w - 1));
  const double vc = std::clamp(v_hat, 0.0, static_cast<double>(h - 1));
  // Fractional weights stay in [0, 1) so integer coordinates read their
  // pixel bit-exactly (x1 collapses onto x0 at the far edge).
  t.x0 = std::max(std::min(static_cast<int>(std::floor(uc)), w - 1), 0);
  t.y0 = std::max(std::min(static_cast<int>(std::floor(vc)), h - 1), 0);
  t.x1 = std::min(t.x0 + 1, w - 1);
  t.y1 = std::min(t.y0 + 1, h - 1);
  t.a = uc - t.x0;
  t.b = vc - t.y0;
  return t;
}

}  // namespace vdepth::detail
