#include <doctest.h>

#include <random>
#include <set>

#include "test_util.hpp"
#include "vdepth/evalkit.hpp"
#include "vdepth/refine.hpp"
#include "vdepth/scene.hpp"

using namespace vdepth;

namespace {

// Two-frame textured plane scene used as the refinement playground.
Scene refine_scene(int w = 32, int h = 24, std::uint64_t seed = 9) {
  SceneSpec spec;
  spec.generator = SceneGenerator::kSlantedPlane;
  spec.width = w;
  spec.height = h;
  spec.frame_count = 2;
  spec.fx = spec.fy = 30.0;
  spec.plane_normal = Eigen::Vector3d(0.2, 0.1, 1.0);
  spec.plane_offset = 5.0;
  spec.step_translation = Eigen::Vector3d(0.3, 0.04, 0.0);
  spec.step_axis_angle = Eigen::Vector3d(0.0, -0.01, 0.005);
  spec.texture.contrast = 0.45;
  spec.texture.min_wavelength = 0.7;
  spec.texture.max_wavelength = 2.5;
  spec.texture.waves = 8;
  return synth_scene(spec, seed);
}

}  // namespace

TEST_CASE("hypothesis multipliers are equally spaced over [-alpha, alpha]") {
  RefineConfig cfg;
  cfg.hypothesis_count = 3;
  cfg.alpha = 0.2;
  const auto mult = hypothesis_multipliers(cfg);
  REQUIRE(mult.size() == 3);
  CHECK(mult[0] == doctest::Approx(-0.2));
  CHECK(mult[1] == doctest::Approx(0.0));
  CHECK(mult[2] == doctest::Approx(0.2));

  cfg.hypothesis_count = 1;
  const auto single = hypothesis_multipliers(cfg);
  REQUIRE(single.size() == 1);
  CHECK(single[0] == 0.0);

  const RefineConfig defaults;
  CHECK(defaults.hypothesis_count == 10);
  CHECK(defaults.alpha == doctest::Approx(0.2));
  const auto ten = hypothesis_multipliers(defaults);
  REQUIRE(ten.size() == 10);
  CHECK(ten.front() == doctest::Approx(-0.2));
  CHECK(ten.back() == doctest::Approx(0.2));
  for (std::size_t i = 1; i < ten.size(); ++i) {
    CHECK(ten[i] - ten[i - 1] == doctest::Approx(0.4 / 9.0));
  }
}

TEST_CASE("hypothesis_depths degenerate and clamped cases") {
  RefineConfig cfg;
  cfg.hypothesis_count = 5;
  cfg.alpha = 0.3;
  const Raster mean(4, 3, 2.0);

  SUBCASE("zero sigma collapses every hypothesis onto the mean") {
    const auto hyp = hypothesis_depths(mean, Raster(4, 3, 0.0), cfg);
    REQUIRE(hyp.size() == 5);
    for (const auto& r : hyp) {
      for (std::size_t i = 0; i < r.size(); ++i) CHECK(r[i] == 2.0);
    }
  }
  SUBCASE("values below the floor are clamped") {
    const auto hyp = hypothesis_depths(Raster(4, 3, 0.12), Raster(4, 3, 1.0),
                                       cfg);
    for (const auto& r : hyp) {
      for (std::size_t i = 0; i < r.size(); ++i) CHECK(r[i] >= cfg.depth_floor);
    }
    CHECK(hyp.front()(0, 0) == doctest::Approx(cfg.depth_floor));
  }
}

TEST_CASE("refine_depth identity cases") {
  const Scene scene = refine_scene();
  const CameraIntrinsics& k = scene.intrinsics;
  RefineConfig cfg;

  SUBCASE("zero sigma returns the mean bit-exactly") {
    DepthDistribution d;
    d.mean = scene.gt_depth[1];
    d.std = Raster(k.width, k.height, 0.0);
    const Raster out = refine_depth(d, scene.frames[1], scene.frames[0],
                                    scene.gt_poses[0], k, cfg);
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == d.mean[i]);
  }
  SUBCASE("a textureless image keeps the mean under the tie-break rule") {
    DepthDistribution d;
    d.mean = Raster(k.width, k.height, 5.0);
    d.std = Raster(k.width, k.height, 0.5);
    const Image flat = Image::constant(k.width, k.height, 0.4, 0.4, 0.4);
    const Raster out = refine_depth(d, flat, flat, scene.gt_poses[0], k, cfg);
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == d.mean[i]);
  }
  SUBCASE("a single hypothesis is the identity") {
    cfg.hypothesis_count = 1;
    DepthDistribution d;
    d.mean = scene.gt_depth[1];
    d.std = Raster(k.width, k.height, 0.4);
    const Raster out = refine_depth(d, scene.frames[1], scene.frames[0],
                                    scene.gt_poses[0], k, cfg);
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == d.mean[i]);
  }
}

TEST_CASE("refine_depth improves a correlated-error estimate") {
  // True depth sits at mean + 0.2 sigma: the hypothesis sweep can reach it.
  const Scene scene = refine_scene(40, 30, 15);
  const CameraIntrinsics& k = scene.intrinsics;
  std::mt19937_64 rng(4);
  DepthDistribution d;
  d.std = testutil::random_raster(k.width, k.height, 0.2, 0.6, rng);
  d.mean = Raster(k.width, k.height);
  for (std::size_t i = 0; i < d.mean.size(); ++i) {
    d.mean[i] = scene.gt_depth[1][i] - 0.2 * d.std[i];
  }
  RefineConfig cfg;
  const Raster refined = refine_depth(d, scene.frames[1], scene.frames[0],
                                      scene.gt_poses[0], k, cfg);
  double before = 0.0, after = 0.0;
  for (std::size_t i = 0; i < refined.size(); ++i) {
    before += std::abs(d.mean[i] - scene.gt_depth[1][i]);
    after += std::abs(refined[i] - scene.gt_depth[1][i]);
  }
  CHECK(after < before);

  SUBCASE("selection never interpolates and moves at most alpha sigma") {
    const auto hyp = hypothesis_depths(d.mean, d.std, cfg);
    for (int v = 0; v < k.height; ++v) {
      for (int u = 0; u < k.width; ++u) {
        bool member = refined(u, v) == d.mean(u, v);
        for (const auto& r : hyp) member = member || refined(u, v) == r(u, v);
        CHECK(member);
        CHECK(std::abs(refined(u, v) - d.mean(u, v)) <=
              cfg.alpha * d.std(u, v) + 1e-12);
      }
    }
  }
  SUBCASE("deterministic output") {
    const Raster again = refine_depth(d, scene.frames[1], scene.frames[0],
                                      scene.gt_poses[0], k, cfg);
    for (std::size_t i = 0; i < again.size(); ++i) {
      CHECK(again[i] == refined[i]);
    }
  }
}

TEST_CASE("flip_postprocess closed cases") {
  std::mt19937_64 rng(5);
  DepthDistribution d;
  d.mean = testutil::random_raster(10, 7, 2.0, 9.0, rng);
  d.std = testutil::random_raster(10, 7, 0.0, 1.0, rng);

  SUBCASE("a perfectly consistent flipped estimate is a no-op with zero std") {
    DepthDistribution flipped;
    flipped.mean = flip_horizontal(d.mean);
    flipped.std = flip_horizontal(d.std);
    const FlipResult out = flip_postprocess(d, flipped);
    for (std::size_t i = 0; i < out.mean.size(); ++i) {
      CHECK(out.mean[i] == doctest::Approx(d.mean[i]));
      CHECK(out.derived_std[i] == doctest::Approx(0.0));
    }
  }
  SUBCASE("flip is an involution") {
    const Raster once = flip_horizontal(d.mean);
    const Raster twice = flip_horizontal(once);
    for (std::size_t i = 0; i < twice.size(); ++i) {
      CHECK(twice[i] == d.mean[i]);
    }
  }
  SUBCASE("constant rasters give the arithmetic midpoint and difference") {
    DepthDistribution ten;
    ten.mean = Raster(6, 4, 10.0);
    ten.std = Raster(6, 4, 0.0);
    DepthDistribution twelve;
    twelve.mean = Raster(6, 4, 12.0);
    twelve.std = Raster(6, 4, 0.0);
    const FlipResult out = flip_postprocess(ten, twelve);
    for (std::size_t i = 0; i < out.mean.size(); ++i) {
      CHECK(out.mean[i] == doctest::Approx(11.0));
      CHECK(out.derived_std[i] == doctest::Approx(2.0));
    }
  }
}
