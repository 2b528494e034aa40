#include <doctest.h>

#include <filesystem>
#include <random>

#include "test_util.hpp"
#include "vdepth/experiment.hpp"
#include "vdepth/io.hpp"
#include "vdepth/photometric.hpp"
#include "vdepth/scene.hpp"

using namespace vdepth;

namespace {

SceneSpec base_spec() {
  SceneSpec spec;
  spec.generator = SceneGenerator::kSlantedPlane;
  spec.width = 48;
  spec.height = 36;
  spec.frame_count = 3;
  spec.fx = spec.fy = 45.0;
  spec.plane_normal = Eigen::Vector3d(0.25, 0.15, 1.0);
  spec.plane_offset = 5.0;
  spec.step_translation = Eigen::Vector3d(0.22, 0.03, 0.02);
  spec.step_axis_angle = Eigen::Vector3d(0.004, -0.006, 0.004);
  spec.texture.contrast = 0.35;
  spec.texture.min_wavelength = 0.7;
  spec.texture.max_wavelength = 2.4;
  spec.texture.waves = 8;
  return spec;
}

// Mean photometric energy of reconstructing frame t from frame t-1 with
// the exact depth and pose.
double warp_consistency(const Scene& scene, int t) {
  const RigidTransform& pose = scene.gt_poses[t - 1];
  const WarpResult res = warp_from_depth(scene.gt_depth[t], pose,
                                         scene.intrinsics,
                                         scene.frames[t - 1]);
  const Raster energy = photometric_energy(scene.frames[t], res.warped);
  double acc = 0.0;
  long n = 0;
  for (int v = 0; v < energy.height(); ++v) {
    for (int u = 0; u < energy.width(); ++u) {
      if (!res.map.is_valid(u, v)) continue;
      acc += energy(u, v);
      ++n;
    }
  }
  REQUIRE(n > 0);
  return acc / static_cast<double>(n);
}

std::filesystem::path temp_dir(const char* name) {
  const auto dir = std::filesystem::temp_directory_path() / "vdepth_tests" /
                   name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("fronto-parallel plane with zero motion is static") {
  SceneSpec spec = base_spec();
  spec.generator = SceneGenerator::kFlatPlane;
  spec.depth = 5.0;
  spec.step_translation.setZero();
  spec.step_axis_angle.setZero();
  const Scene scene = synth_scene(spec, 2);
  REQUIRE(scene.frames.size() == 3);
  for (const auto& depth : scene.gt_depth) {
    for (const double z : depth) CHECK(z == doctest::Approx(5.0));
  }
  for (int c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < scene.frames[0].channel[c].size(); ++i) {
      CHECK(scene.frames[1].channel[c][i] ==
            doctest::Approx(scene.frames[0].channel[c][i]));
      CHECK(scene.frames[2].channel[c][i] ==
            doctest::Approx(scene.frames[0].channel[c][i]));
    }
  }
}

TEST_CASE("slanted plane depth matches the plane-ray intersection formula") {
  const SceneSpec spec = base_spec();
  const Scene scene = synth_scene(spec, 3);
  const Eigen::Vector3d n = spec.plane_normal.normalized();
  for (int v = 0; v < spec.height; ++v) {
    for (int u = 0; u < spec.width; ++u) {
      const Eigen::Vector3d ray = scene.intrinsics.ray(u, v);
      const double expected = spec.plane_offset / n.dot(ray);
      CHECK(scene.gt_depth[0](u, v) == doctest::Approx(expected).epsilon(1e-12));
    }
  }
}

TEST_CASE("scenes are bit-identical for identical seeds") {
  const SceneSpec spec = base_spec();
  const Scene a = synth_scene(spec, 11);
  const Scene b = synth_scene(spec, 11);
  for (std::size_t t = 0; t < a.frames.size(); ++t) {
    for (int c = 0; c < 3; ++c) {
      for (std::size_t i = 0; i < a.frames[t].channel[c].size(); ++i) {
        CHECK(a.frames[t].channel[c][i] == b.frames[t].channel[c][i]);
      }
    }
    for (std::size_t i = 0; i < a.gt_depth[t].size(); ++i) {
      CHECK(a.gt_depth[t][i] == b.gt_depth[t][i]);
    }
  }
  const Scene c = synth_scene(spec, 12);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.frames[0].channel[0].size(); ++i) {
    any_diff = any_diff || a.frames[0].channel[0][i] != c.frames[0].channel[0][i];
  }
  CHECK(any_diff);
}

TEST_CASE("rendering consistency: ground-truth warp reconstructs frames") {
  const Scene scene = synth_scene(base_spec(), 5);
  for (int t = 1; t < 3; ++t) {
    CHECK(warp_consistency(scene, t) <= 5e-3);
  }
}

TEST_CASE("two-plane step and heightfield render with positive depth") {
  SceneSpec spec = base_spec();
  spec.generator = SceneGenerator::kTwoPlaneStep;
  spec.step_edge_x = 0.3;
  spec.step_depth_near = 4.0;
  spec.step_depth_far = 6.0;
  const Scene step_scene = synth_scene(spec, 6);
  double lo = 1e9, hi = 0.0;
  for (const double z : step_scene.gt_depth[0]) {
    lo = std::min(lo, z);
    hi = std::max(hi, z);
  }
  CHECK(lo >= 4.0);
  CHECK(hi <= 6.0 + 1e-9);
  CHECK(warp_consistency(step_scene, 1) <= 2e-2);  // depth edges alias

  spec = base_spec();
  spec.generator = SceneGenerator::kHeightfield;
  spec.depth = 5.0;
  spec.height_amplitude = 0.25;
  spec.height_wavelength = 2.0;
  const Scene hf_scene = synth_scene(spec, 7);
  for (const double z : hf_scene.gt_depth[1]) CHECK(z > 0.0);
  CHECK(warp_consistency(hf_scene, 1) <= 5e-3);
}

TEST_CASE("steep heightfields are refused") {
  SceneSpec spec = base_spec();
  spec.generator = SceneGenerator::kHeightfield;
  spec.height_amplitude = 3.0;
  spec.height_wavelength = 0.2;
  CHECK_THROWS_AS(synth_scene(spec, 8), std::invalid_argument);
}

TEST_CASE("flipped scenes stay geometrically consistent") {
  const Scene scene = synth_scene(base_spec(), 9);
  const Scene flipped = flip_scene(scene);
  CHECK(flipped.intrinsics.cx ==
        doctest::Approx((scene.intrinsics.width - 1) - scene.intrinsics.cx));
  for (const auto& p : flipped.gt_poses) CHECK(p.is_valid(1e-9));
  CHECK(warp_consistency(flipped, 1) <= 5e-3);
  CHECK(warp_consistency(flipped, 2) <= 5e-3);
}

TEST_CASE("raster and image round trips") {
  const auto dir = temp_dir("io");
  std::mt19937_64 rng(10);

  SUBCASE("raster float32 round trip") {
    const Raster r = testutil::random_raster(13, 9, -4.0, 90.0, rng);
    write_raster(dir / "depth.raw", r);
    const Raster back = read_raster(dir / "depth.raw");
    REQUIRE(back.width() == 13);
    REQUIRE(back.height() == 9);
    for (std::size_t i = 0; i < r.size(); ++i) {
      CHECK(back[i] == static_cast<double>(static_cast<float>(r[i])));
    }
  }
  SUBCASE("raw image round trip") {
    const Image img = testutil::random_image(7, 5, rng);
    write_image_raw(dir / "img.raw", img);
    const Image back = read_image_raw(dir / "img.raw");
    for (int c = 0; c < 3; ++c) {
      for (std::size_t i = 0; i < img.channel[c].size(); ++i) {
        CHECK(back.channel[c][i] ==
              static_cast<double>(static_cast<float>(img.channel[c][i])));
      }
    }
  }
  SUBCASE("png round trip within quantization") {
    const Image img = testutil::random_image(12, 8, rng);
    write_image_png(dir / "img.png", img);
    const Image back = read_image_png(dir / "img.png");
    REQUIRE(back.width() == 12);
    for (int c = 0; c < 3; ++c) {
      for (std::size_t i = 0; i < img.channel[c].size(); ++i) {
        CHECK(std::abs(back.channel[c][i] - img.channel[c][i]) <=
              0.5 / 255.0 + 1e-12);
      }
    }
  }
  SUBCASE("intrinsics json round trip") {
    const CameraIntrinsics k = testutil::toy_intrinsics(640, 192, 320.0);
    save_intrinsics(dir / "intrinsics.json", k);
    const CameraIntrinsics back = load_intrinsics(dir / "intrinsics.json");
    CHECK(back.fx == k.fx);
    CHECK(back.fy == k.fy);
    CHECK(back.cx == k.cx);
    CHECK(back.cy == k.cy);
    CHECK(back.width == k.width);
    CHECK(back.height == k.height);
  }
  SUBCASE("pose json round trip") {
    std::vector<RigidTransform> poses{testutil::random_transform(rng),
                                      testutil::random_transform(rng)};
    save_poses(dir / "poses.json", poses);
    const auto back = load_poses(dir / "poses.json");
    REQUIRE(back.size() == 2);
    for (std::size_t i = 0; i < poses.size(); ++i) {
      CHECK((back[i].rotation - poses[i].rotation).cwiseAbs().maxCoeff() <
            1e-15);
      CHECK((back[i].translation - poses[i].translation).norm() < 1e-15);
    }
  }
  SUBCASE("fnv1a64 is deterministic and spreads") {
    CHECK(fnv1a64("abc") == fnv1a64("abc"));
    CHECK(fnv1a64("abc") != fnv1a64("abd"));
  }
}

TEST_CASE("experiment config json round trip") {
  const ExperimentConfig cfg = bundled_slanted_plane_config();
  const std::string text = experiment_config_to_json(cfg);
  const ExperimentConfig back = experiment_config_from_json(text);
  CHECK(back.seed == cfg.seed);
  CHECK(back.scene.width == cfg.scene.width);
  CHECK(back.scene.texture.has_low_contrast_band);
  CHECK(back.scene.texture.band_x0 ==
        doctest::Approx(cfg.scene.texture.band_x0));
  CHECK(back.train.adam.lr == doctest::Approx(cfg.train.adam.lr));
  CHECK(back.train.stage1_steps == cfg.train.stage1_steps);
  CHECK(back.refine.refine.hypothesis_count ==
        cfg.refine.refine.hypothesis_count);
  CHECK(back.eval.percentages == cfg.eval.percentages);
  CHECK(experiment_config_to_json(back) == text);
}

TEST_CASE("run_experiment produces the artifact tree") {
  const auto dir = temp_dir("experiment");
  ExperimentConfig cfg = bundled_slanted_plane_config();
  cfg.scene.width = 32;
  cfg.scene.height = 24;
  cfg.train.stage1_steps = 6;
  cfg.train.stage2_steps = 4;
  cfg.train.objective.grid_n_c = 4;
  cfg.train.objective.grid_n_r = 4;
  cfg.scene.texture.band_x0 = 0.4;
  cfg.scene.texture.band_x1 = 0.9;
  const ExperimentResult res = run_experiment(cfg, dir);
  CHECK_FALSE(res.failed);
  CHECK(std::filesystem::exists(dir / "manifest.json"));
  CHECK(std::filesystem::exists(dir / "config.json"));
  CHECK(std::filesystem::exists(dir / "scene" / "frame_000.png"));
  CHECK(std::filesystem::exists(dir / "scene" / "gt_depth_002.raw"));
  CHECK(std::filesystem::exists(dir / "scene" / "intrinsics.json"));
  CHECK(std::filesystem::exists(dir / "estimate" / "depth_mean_000.raw"));
  CHECK(std::filesystem::exists(dir / "estimate" / "loss_history.csv"));
  CHECK(std::filesystem::exists(dir / "refine" / "refined_mean_001.raw"));
  CHECK(std::filesystem::exists(dir / "eval" / "metrics.csv"));
  CHECK(std::filesystem::exists(dir / "eval" / "nll.json"));
  CHECK(std::filesystem::exists(dir / "eval" / "removal_curve.csv"));
  CHECK(res.base_metrics.valid_count > 0);
  REQUIRE(res.refined_metrics.has_value());

  // The loaded config reproduces the written one.
  const ExperimentConfig echoed = load_experiment_config(dir / "config.json");
  CHECK(experiment_config_to_json(echoed) == experiment_config_to_json(cfg));
}
