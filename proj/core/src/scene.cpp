#include "vdepth/scene.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

namespace vdepth {

SceneGenerator scene_generator_from_name(const std::string& name) {
  if (name == "flat_plane") return SceneGenerator::kFlatPlane;
  if (name == "slanted_plane") return SceneGenerator::kSlantedPlane;
  if (name == "two_plane_step") return SceneGenerator::kTwoPlaneStep;
  if (name == "heightfield") return SceneGenerator::kHeightfield;
  throw std::invalid_argument("unknown scene generator: " + name);
}

std::string scene_generator_name(SceneGenerator g) {
  switch (g) {
    case SceneGenerator::kFlatPlane: return "flat_plane";
    case SceneGenerator::kSlantedPlane: return "slanted_plane";
    case SceneGenerator::kTwoPlaneStep: return "two_plane_step";
    case SceneGenerator::kHeightfield: return "heightfield";
  }
  throw std::invalid_argument("unknown scene generator enum");
}

void SceneSpec::validate() const {
  if (width < 2 || height < 2) {
    throw std::invalid_argument("SceneSpec: raster must be at least 2x2");
  }
  if (frame_count < 1) {
    throw std::invalid_argument("SceneSpec: need at least one frame");
  }
  if (!(fx > 0.0) || !(fy > 0.0)) {
    throw std::invalid_argument("SceneSpec: focal lengths must be positive");
  }
  if (!(depth > 0.0) || !(plane_offset > 0.0) || !(step_depth_near > 0.0) ||
      !(step_depth_far > 0.0)) {
    throw std::invalid_argument("SceneSpec: surface depths must be positive");
  }
  if (generator == SceneGenerator::kTwoPlaneStep &&
      !(step_depth_near < step_depth_far)) {
    throw std::invalid_argument("SceneSpec: step needs near < far");
  }
  if (generator == SceneGenerator::kHeightfield &&
      (height_amplitude < 0.0 || !(height_wavelength > 0.0) ||
       height_waves < 1 || height_amplitude >= depth)) {
    throw std::invalid_argument("SceneSpec: bad heightfield parameters");
  }
  if (texture.waves < 1 || !(texture.min_wavelength > 0.0) ||
      texture.min_wavelength > texture.max_wavelength) {
    throw std::invalid_argument("SceneSpec: bad texture parameters");
  }
}

namespace {

constexpr double kTau = 2.0 * std::numbers::pi;

struct Wave {
  double kx, ky;                 // wavevector, rad/m
  std::array<double, 3> phase;   // per channel
  double amplitude;
};

struct Texture {
  std::vector<Wave> waves;
  double norm = 1.0;
  TextureSpec spec;

  double contrast_at(double x) const {
    if (!spec.has_low_contrast_band) return spec.contrast;
    // Smoothstep into and out of the band.
    auto smooth = [&](double t) {
      const double s = std::clamp(t, 0.0, 1.0);
      return s * s * (3.0 - 2.0 * s);
    };
    const double f = std::max(spec.band_feather, 1e-9);
    const double in_band = smooth((x - spec.band_x0) / f + 0.5) *
                           smooth((spec.band_x1 - x) / f + 0.5);
    return spec.contrast + (spec.band_contrast - spec.contrast) * in_band;
  }

  double eval(double x, double y, int c) const {
    double acc = 0.0;
    for (const auto& w : waves) {
      acc += w.amplitude * std::sin(w.kx * x + w.ky * y + w.phase[c]);
    }
    return std::clamp(0.5 + contrast_at(x) * acc / norm, 0.0, 1.0);
  }
};

Texture make_texture(const TextureSpec& spec, std::uint64_t master_seed) {
  Texture tex;
  tex.spec = spec;
  std::mt19937_64 rng(master_seed ^ (spec.seed * 0x9e3779b97f4a7c15ULL + 1));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double total = 0.0;
  for (int i = 0; i < spec.waves; ++i) {
    Wave w;
    const double wavelength =
        spec.min_wavelength *
        std::pow(spec.max_wavelength / spec.min_wavelength, unit(rng));
    const double angle = unit(rng) * kTau;
    const double k = kTau / wavelength;
    w.kx = k * std::cos(angle);
    w.ky = k * std::sin(angle);
    for (int c = 0; c < 3; ++c) w.phase[c] = unit(rng) * kTau;
    w.amplitude = 0.5 + 0.5 * unit(rng);
    total += w.amplitude;
    tex.waves.push_back(w);
  }
  tex.norm = total;
  return tex;
}

struct Heightfield {
  std::vector<Wave> waves;
  double norm = 1.0;
  double base = 5.0;
  double amplitude = 0.0;

  double height(double x, double y) const {
    double acc = 0.0;
    for (const auto& w : waves) {
      acc += w.amplitude * std::sin(w.kx * x + w.ky * y + w.phase[0]);
    }
    return base + amplitude * acc / norm;
  }

  // Bound on |grad h|, used to validate ray monotonicity.
  double max_slope() const {
    double acc = 0.0;
    for (const auto& w : waves) {
      acc += w.amplitude * std::hypot(w.kx, w.ky);
    }
    return amplitude * acc / norm;
  }
};

Heightfield make_heightfield(const SceneSpec& spec, std::uint64_t seed) {
  Heightfield hf;
  hf.base = spec.depth;
  hf.amplitude = spec.height_amplitude;
  std::mt19937_64 rng(seed * 0x2545f4914f6cdd1dULL + 17);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double total = 0.0;
  for (int i = 0; i < spec.height_waves; ++i) {
    Wave w;
    const double wavelength = spec.height_wavelength * (1.0 + 2.0 * unit(rng));
    const double angle = unit(rng) * kTau;
    const double k = kTau / wavelength;
    w.kx = k * std::cos(angle);
    w.ky = k * std::sin(angle);
    w.phase[0] = unit(rng) * kTau;
    w.amplitude = 0.5 + 0.5 * unit(rng);
    total += w.amplitude;
    hf.waves.push_back(w);
  }
  hf.norm = total;
  return hf;
}

// Ray r(t) = origin + t * dir in world coordinates, dir has unit z in the
// camera frame so t equals the camera-frame depth.
struct SurfaceHit {
  double t = -1.0;
  Eigen::Vector3d point = Eigen::Vector3d::Zero();
  bool ok = false;
};

SurfaceHit intersect(const SceneSpec& spec, const Heightfield& hf,
                     const Eigen::Vector3d& origin,
                     const Eigen::Vector3d& dir) {
  SurfaceHit hit;
  switch (spec.generator) {
    case SceneGenerator::kFlatPlane: {
      if (dir.z() <= 1e-12) return hit;
      hit.t = (spec.depth - origin.z()) / dir.z();
      break;
    }
    case SceneGenerator::kSlantedPlane: {
      const Eigen::Vector3d n = spec.plane_normal.normalized();
      const double denom = n.dot(dir);
      if (denom <= 1e-12) return hit;
      hit.t = (spec.plane_offset - n.dot(origin)) / denom;
      break;
    }
    case SceneGenerator::kTwoPlaneStep: {
      double best = std::numeric_limits<double>::infinity();
      if (dir.z() > 1e-12) {
        const double t_near = (spec.step_depth_near - origin.z()) / dir.z();
        if (t_near > 0.0 &&
            origin.x() + t_near * dir.x() < spec.step_edge_x) {
          best = std::min(best, t_near);
        }
        const double t_far = (spec.step_depth_far - origin.z()) / dir.z();
        if (t_far > 0.0 && origin.x() + t_far * dir.x() >= spec.step_edge_x) {
          best = std::min(best, t_far);
        }
      }
      if (std::abs(dir.x()) > 1e-12) {
        const double t_wall = (spec.step_edge_x - origin.x()) / dir.x();
        const double z = origin.z() + t_wall * dir.z();
        if (t_wall > 0.0 && z >= spec.step_depth_near &&
            z <= spec.step_depth_far) {
          best = std::min(best, t_wall);
        }
      }
      if (!std::isfinite(best)) return hit;
      hit.t = best;
      break;
    }
    case SceneGenerator::kHeightfield: {
      if (dir.z() <= 1e-12) return hit;
      auto f = [&](double t) {
        const Eigen::Vector3d p = origin + t * dir;
        return p.z() - hf.height(p.x(), p.y());
      };
      double lo = (hf.base - hf.amplitude - origin.z()) / dir.z();
      double hi = (hf.base + hf.amplitude - origin.z()) / dir.z();
      lo = std::max(lo, 1e-6);
      if (f(lo) > 0.0 || f(hi) < 0.0) return hit;
      for (int it = 0; it < 80; ++it) {
        const double mid = 0.5 * (lo + hi);
        (f(mid) < 0.0 ? lo : hi) = mid;
      }
      hit.t = 0.5 * (lo + hi);
      break;
    }
  }
  if (hit.t <= 0.0) return hit;
  hit.point = origin + hit.t * dir;
  hit.ok = true;
  return hit;
}

}  // namespace

Scene synth_scene(const SceneSpec& spec, std::uint64_t seed) {
  spec.validate();

  Scene scene;
  scene.seed = seed;
  scene.intrinsics.fx = spec.fx;
  scene.intrinsics.fy = spec.fy;
  scene.intrinsics.cx = (spec.width - 1) / 2.0;
  scene.intrinsics.cy = (spec.height - 1) / 2.0;
  scene.intrinsics.width = spec.width;
  scene.intrinsics.height = spec.height;
  scene.intrinsics.validate();

  const Texture tex = make_texture(spec.texture, seed);
  Heightfield hf;
  if (spec.generator == SceneGenerator::kHeightfield) {
    hf = make_heightfield(spec, seed);
    // Bounded slope keeps every pixel ray single-crossing.
    const double ray_xy =
        std::hypot((spec.width - 1) / 2.0 / spec.fx,
                   (spec.height - 1) / 2.0 / spec.fy);
    if (hf.max_slope() * ray_xy >= 0.9) {
      throw std::invalid_argument(
          "synth_scene: heightfield too steep for robust ray intersection");
    }
  }

  const RigidTransform step =
      se3_from_params(spec.step_axis_angle, spec.step_translation);
  for (int k = 0; k + 1 < spec.frame_count; ++k) {
    scene.gt_poses.push_back(step);
  }

  // Camera-to-world chain: frame 0 is the world frame and each gt pose maps
  // frame k+1 coordinates into frame k coordinates.
  RigidTransform cam_to_world;  // identity for frame 0
  for (int k = 0; k < spec.frame_count; ++k) {
    Image frame(spec.width, spec.height);
    Raster depth(spec.width, spec.height);
    for (int v = 0; v < spec.height; ++v) {
      for (int u = 0; u < spec.width; ++u) {
        const Eigen::Vector3d dir_cam = scene.intrinsics.ray(u, v);
        const Eigen::Vector3d dir_w = cam_to_world.rotation * dir_cam;
        const SurfaceHit hit = intersect(spec, hf, cam_to_world.translation,
                                         dir_w);
        if (!hit.ok) {
          throw std::invalid_argument(
              "synth_scene: ray missed the surface at frame " +
              std::to_string(k) + " pixel (" + std::to_string(u) + ", " +
              std::to_string(v) + "); adjust geometry or motion");
        }
        depth(u, v) = hit.t;
        for (int c = 0; c < 3; ++c) {
          frame.channel[c](u, v) = tex.eval(hit.point.x(), hit.point.y(), c);
        }
      }
    }
    scene.frames.push_back(std::move(frame));
    scene.gt_depth.push_back(std::move(depth));
    if (k + 1 < spec.frame_count) {
      cam_to_world = cam_to_world.compose(step);
    }
  }
  return scene;
}

Scene flip_scene(const Scene& scene) {
  Scene out;
  out.seed = scene.seed;
  out.intrinsics = scene.intrinsics;
  out.intrinsics.cx = (scene.intrinsics.width - 1) - scene.intrinsics.cx;
  for (const auto& f : scene.frames) out.frames.push_back(flip_horizontal(f));
  for (const auto& d : scene.gt_depth) {
    out.gt_depth.push_back(flip_horizontal(d));
  }
  // Conjugate by the x mirror M = diag(-1, 1, 1): R' = M R M, tau' = M tau.
  Eigen::Matrix3d mirror = Eigen::Matrix3d::Identity();
  mirror(0, 0) = -1.0;
  for (const auto& p : scene.gt_poses) {
    RigidTransform t;
    t.rotation = mirror * p.rotation * mirror;
    t.translation = mirror * p.translation;
    out.gt_poses.push_back(t);
  }
  return out;
}

}  // namespace vdepth
