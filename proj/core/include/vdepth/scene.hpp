#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vdepth/geometry.hpp"
#include "vdepth/image.hpp"
#include "vdepth/raster.hpp"

namespace vdepth {

/// Band-limited procedural texture: a sum of random-phase plane waves in
/// world (x, y) meters, evaluated analytically at render time. Contrast
/// scales the pattern around 0.5; an optional low-contrast band in world x
/// reproduces the weak-texture failure mode.
struct TextureSpec {
  double contrast = 0.35;
  int waves = 6;
  double min_wavelength = 0.6;  // meters
  double max_wavelength = 2.4;  // meters
  std::uint64_t seed = 0;

  bool has_low_contrast_band = false;
  double band_contrast = 0.04;
  double band_x0 = 0.0;  // world x range of the band
  double band_x1 = 0.0;
  double band_feather = 0.2;  // smoothstep width, meters
};

enum class SceneGenerator {
  kFlatPlane,
  kSlantedPlane,
  kTwoPlaneStep,
  kHeightfield,
};

SceneGenerator scene_generator_from_name(const std::string& name);
std::string scene_generator_name(SceneGenerator g);

/// Description of a synthetic scene: a textured surface observed by a
/// pinhole camera under constant per-step motion. The per-step motion is
/// exactly the relative pose between consecutive frames (frame k+1
/// coordinates into frame k coordinates).
struct SceneSpec {
  SceneGenerator generator = SceneGenerator::kSlantedPlane;
  int width = 64;
  int height = 48;
  int frame_count = 3;
  double fx = 60.0;
  double fy = 60.0;

  // Flat plane / heightfield base / step plane depths (meters).
  double depth = 5.0;
  // Slanted plane: n^T X = offset in world coordinates, n normalized.
  Eigen::Vector3d plane_normal{0.15, 0.1, 1.0};
  double plane_offset = 5.0;
  // Two-plane step: near sheet for world x < edge, far sheet beyond, plus
  // the connecting riser wall.
  double step_edge_x = 0.0;
  double step_depth_near = 4.0;
  double step_depth_far = 6.0;
  // Heightfield: depth + amplitude * noise(x, y), gentle slopes only.
  double height_amplitude = 0.3;
  double height_wavelength = 1.5;  // shortest component, meters
  int height_waves = 4;

  // Per-step camera motion (frame k+1 -> frame k).
  Eigen::Vector3d step_axis_angle{0.0, 0.0, 0.0};
  Eigen::Vector3d step_translation{0.25, 0.0, 0.0};

  TextureSpec texture;

  void validate() const;
};

/// Rendered sequence with exact ground truth.
struct Scene {
  std::vector<Image> frames;
  std::vector<Raster> gt_depth;
  std::vector<RigidTransform> gt_poses;  // [k]: frame k+1 -> frame k
  CameraIntrinsics intrinsics;
  std::uint64_t seed = 0;
};

/// Renders the scene deterministically from (spec, seed). Frames are point
/// samples of the analytic surface texture; depths and poses are exact.
/// Throws std::invalid_argument for specs whose geometry the renderer
/// cannot intersect robustly.
Scene synth_scene(const SceneSpec& spec, std::uint64_t seed);

/// Horizontally mirrored scene: flipped frames and depths, mirrored
/// intrinsics (cx -> width-1-cx) and conjugated poses, so that the flipped
/// sequence is geometrically consistent.
Scene flip_scene(const Scene& scene);

}  // namespace vdepth
