#include <doctest.h>

#include <random>

#include "test_util.hpp"
#include "vdepth/objective.hpp"
#include "vdepth/scene.hpp"

using namespace vdepth;

namespace {

SceneSpec gradcheck_scene_spec(int w = 10, int h = 8) {
  SceneSpec spec;
  spec.generator = SceneGenerator::kSlantedPlane;
  spec.width = w;
  spec.height = h;
  spec.frame_count = 2;
  spec.fx = 12.0;
  spec.fy = 12.0;
  spec.plane_normal = Eigen::Vector3d(0.25, 0.15, 1.0);
  spec.plane_offset = 5.0;
  spec.step_translation = Eigen::Vector3d(0.3, 0.05, 0.02);
  spec.step_axis_angle = Eigen::Vector3d(0.01, -0.02, 0.015);
  spec.texture.contrast = 0.4;
  spec.texture.min_wavelength = 0.8;
  spec.texture.max_wavelength = 3.0;
  return spec;
}

struct Fixture {
  Scene scene;
  OptimState state;
  StepNoise noise;
  ObjectiveConfig cfg;
  LossWeights weights;

  SceneView view() const { return {scene.frames, scene.intrinsics}; }
};

// Generic state away from symmetry: a monotone depth ramp plus a smooth
// wiggle (neighbor differences stay bounded away from the absolute-value
// kinks of the smoothness term), sigma fields varied, pose off the truth.
Fixture make_fixture(int w = 10, int h = 8, std::uint64_t seed = 32) {
  Fixture f;
  f.scene = synth_scene(gradcheck_scene_spec(w, h), seed);
  f.state = OptimState::initial(w, h, 2, 5.0, 0.1);
  // Near-truth depth plus a smooth offset: the plane slope keeps neighbor
  // differences away from the smoothness kinks, and the small residual
  // error keeps reprojection losses well below the identity losses so the
  // auto-mask is stable under finite-difference probes.
  for (std::size_t t = 0; t < f.state.frames.size(); ++t) {
    auto& fr = f.state.frames[t];
    const double phase = 0.9 * static_cast<double>(t);
    for (int v = 0; v < h; ++v) {
      for (int u = 0; u < w; ++u) {
        fr.mean(u, v) = f.scene.gt_depth[t](u, v) + 0.15 +
                        0.05 * std::sin(0.9 * u + 1.3 + phase) *
                            std::cos(0.7 * v - 0.4);
        fr.log_sigma(u, v) = std::log(0.12) +
                             0.3 * std::sin(1.1 * u - 0.6 + phase) *
                                 std::sin(0.8 * v + 0.9);
      }
    }
  }
  f.state.poses[0].axis_angle = Eigen::Vector3d(0.02, -0.01, 0.02);
  f.state.poses[0].translation = Eigen::Vector3d(0.25, 0.03, 0.01);

  // Grid intervals divide the raster so every offset draw samples the
  // same count in both frames.
  f.cfg.grid_n_c = w / 2;
  f.cfg.grid_n_r = h / 2;
  f.cfg.sinkhorn.epsilon = 0.05;
  f.cfg.sinkhorn.iterations = 15;
  GridSpec grid;
  grid.n_c = f.cfg.grid_n_c;
  grid.n_r = f.cfg.grid_n_r;
  f.noise = StepNoise::draw(w, h, 2, grid, seed * 7 + 5);
  return f;
}

struct FdReport {
  double max_rel_total = 0.0;
  double max_rel_img = 0.0;
  double max_rel_mw = 0.0;
  double max_rel_smooth = 0.0;
  double max_rel_std = 0.0;

  double worst() const {
    return std::max({max_rel_total, max_rel_img, max_rel_mw, max_rel_smooth,
                     max_rel_std});
  }
};

// Central finite differences of every loss component against the analytic
// gradients of the stage's unfrozen parameter groups.
FdReport fd_check(Fixture& f, double rel_step = 1e-4, double floor = 1e-7) {
  const LossWeights w = f.weights;
  LossWeights only_img;
  only_img.lambda_img = 1.0;
  only_img.lambda_w = only_img.lambda_s = only_img.lambda_d = 0.0;
  LossWeights only_mw;
  only_mw.lambda_img = 0.0;
  only_mw.lambda_w = 1.0;
  only_mw.lambda_s = only_mw.lambda_d = 0.0;
  LossWeights only_smooth;
  only_smooth.lambda_img = only_smooth.lambda_w = 0.0;
  only_smooth.lambda_s = 1.0;
  only_smooth.lambda_d = 0.0;
  LossWeights only_std;
  only_std.lambda_img = only_std.lambda_w = only_std.lambda_s = 0.0;
  only_std.lambda_d = 1.0;

  const GradientRecord g_total =
      gradients(f.state, f.view(), f.noise, w, f.cfg);
  const GradientRecord g_img =
      gradients(f.state, f.view(), f.noise, only_img, f.cfg);
  const GradientRecord g_mw =
      gradients(f.state, f.view(), f.noise, only_mw, f.cfg);
  const GradientRecord g_smooth =
      gradients(f.state, f.view(), f.noise, only_smooth, f.cfg);
  const GradientRecord g_std =
      gradients(f.state, f.view(), f.noise, only_std, f.cfg);

  FdReport rep;
  auto probe = [&](double& slot, std::size_t frame_or_pair, int which,
                   std::size_t flat) {
    const double saved = slot;
    const double h = rel_step * std::max(std::abs(saved), 1.0);
    slot = saved + h;
    const LossBreakdown up = total_loss(f.state, f.view(), f.noise, w, f.cfg);
    slot = saved - h;
    const LossBreakdown down =
        total_loss(f.state, f.view(), f.noise, w, f.cfg);
    slot = saved;
    const double inv = 1.0 / (2.0 * h);

    auto pick = [&](const GradientRecord& rec) -> double {
      if (which == 0) return rec.d_mean[frame_or_pair][flat];
      if (which == 1) return rec.d_log_sigma[frame_or_pair][flat];
      return rec.d_pose[frame_or_pair](static_cast<int>(flat));
    };
    // One-hot weights make each record the gradient of that raw component.
    rep.max_rel_total =
        std::max(rep.max_rel_total,
                 testutil::rel_err(pick(g_total), (up.total - down.total) * inv,
                                   floor));
    rep.max_rel_img = std::max(
        rep.max_rel_img,
        testutil::rel_err(pick(g_img), (up.img - down.img) * inv, floor));
    rep.max_rel_mw = std::max(
        rep.max_rel_mw,
        testutil::rel_err(pick(g_mw), (up.mw - down.mw) * inv, floor));
    rep.max_rel_smooth = std::max(
        rep.max_rel_smooth,
        testutil::rel_err(pick(g_smooth), (up.smooth - down.smooth) * inv,
                          floor));
    rep.max_rel_std = std::max(
        rep.max_rel_std,
        testutil::rel_err(pick(g_std), (up.std - down.std) * inv, floor));
    return;
  };

  const bool stage1 = f.state.stage == 1;
  for (std::size_t t = 0; t < f.state.frames.size(); ++t) {
    Raster& mean = f.state.frames[t].mean;
    Raster& ls = f.state.frames[t].log_sigma;
    for (std::size_t i = 0; i < mean.size(); ++i) {
      if (stage1) {
        probe(mean[i], t, 0, i);
      } else {
        probe(ls[i], t, 1, i);
      }
    }
  }
  if (stage1) {
    for (std::size_t k = 0; k < f.state.poses.size(); ++k) {
      for (int i = 0; i < 3; ++i) {
        probe(f.state.poses[k].axis_angle[i], k, 2, i);
        probe(f.state.poses[k].translation[i], k, 2, i + 3);
      }
    }
  }
  return rep;
}

}  // namespace

TEST_CASE("loss breakdown sums to the total") {
  Fixture f = make_fixture();
  LossWeights w;
  w.lambda_w = 0.7;
  w.lambda_s = 0.02;
  w.lambda_d = 0.4;
  const LossBreakdown loss = total_loss(f.state, f.view(), f.noise, w, f.cfg);
  CHECK(loss.total == doctest::Approx(loss.img + 0.7 * loss.mw +
                                      0.02 * loss.smooth + 0.4 * loss.std)
                          .epsilon(1e-12));
}

TEST_CASE("default weights follow the two-stage recipe") {
  const LossWeights w;
  CHECK(w.lambda_w == doctest::Approx(0.3));
  CHECK(w.lambda_s == doctest::Approx(0.001));
  CHECK(w.lambda_d == doctest::Approx(0.3));
  CHECK(w.lambda_img == doctest::Approx(1.0));
}

TEST_CASE("perfect static reconstruction drives the total to zero") {
  // Exact depth and pose, zero noise and zero sigma: the image term is
  // fully auto-masked, transport matches points exactly, depth is constant.
  SceneSpec spec = gradcheck_scene_spec(12, 8);
  spec.generator = SceneGenerator::kFlatPlane;
  spec.depth = 5.0;
  spec.plane_normal = Eigen::Vector3d(0, 0, 1);
  spec.step_translation.setZero();
  spec.step_axis_angle.setZero();
  const Scene scene = synth_scene(spec, 3);

  OptimState state = OptimState::initial(12, 8, 2, 5.0, 1.0);
  for (auto& fr : state.frames) {
    fr.mean = scene.gt_depth[0];
    fr.log_sigma.fill(-60.0);  // sigma underflows to zero
  }
  ObjectiveConfig cfg;
  cfg.sigma_min = 0.0;
  cfg.grid_n_c = 4;
  cfg.grid_n_r = 4;
  const StepNoise noise = StepNoise::shared_grid(
      {NoiseField::zeros(12, 8), NoiseField::zeros(12, 8)},
      GridSpec{4, 4, 1, 1});
  const LossBreakdown loss =
      total_loss(state, SceneView{scene.frames, scene.intrinsics}, noise,
                 LossWeights{}, cfg);
  CHECK(loss.img == 0.0);
  CHECK(loss.smooth == doctest::Approx(0.0));
  CHECK(loss.std == doctest::Approx(0.0));
  CHECK(loss.mw < 1e-6);
  CHECK(loss.total < 1e-6);
}

TEST_CASE("stage-1 gradients match finite differences per component") {
  Fixture f = make_fixture();
  f.state.stage = 1;
  const FdReport rep = fd_check(f);
  CAPTURE(rep.max_rel_total);
  CAPTURE(rep.max_rel_img);
  CAPTURE(rep.max_rel_mw);
  CAPTURE(rep.max_rel_smooth);
  CAPTURE(rep.max_rel_std);
  CHECK(rep.worst() < 1e-3);
}

TEST_CASE("stage-2 gradients match finite differences per component") {
  Fixture f = make_fixture();
  f.state.stage = 2;
  const FdReport rep = fd_check(f);
  CAPTURE(rep.max_rel_total);
  CAPTURE(rep.max_rel_mw);
  CHECK(rep.worst() < 1e-3);
}

TEST_CASE("squared-error energy model also differentiates cleanly") {
  Fixture f = make_fixture(8, 6, 77);
  f.cfg.energy = EnergyModel::kSquaredError;
  f.state.stage = 1;
  const FdReport rep = fd_check(f);
  CAPTURE(rep.max_rel_total);
  CAPTURE(rep.max_rel_img);
  CAPTURE(rep.max_rel_mw);
  CAPTURE(rep.max_rel_smooth);
  CAPTURE(rep.max_rel_std);
  CHECK(rep.worst() < 1e-3);
}

TEST_CASE("std regularizer gradient on a raster of ones") {
  const int w = 6, h = 5;
  SceneSpec spec = gradcheck_scene_spec(w, h);
  spec.frame_count = 1;
  const Scene scene = synth_scene(spec, 5);
  OptimState state = OptimState::initial(w, h, 1, 5.0, 1.0);  // sigma = 1
  state.stage = 2;
  ObjectiveConfig cfg;
  const StepNoise noise =
      StepNoise::shared_grid({NoiseField::zeros(w, h)}, GridSpec{4, 4, 1, 1});
  LossWeights weights;  // lambda_d = 0.3
  const GradientRecord rec = gradients(
      state, SceneView{scene.frames, scene.intrinsics}, noise, weights, cfg);
  for (std::size_t i = 0; i < rec.d_log_sigma[0].size(); ++i) {
    // d/d log_sigma = lambda_d / (n_w n_h) * sigma, sigma = 1.
    CHECK(rec.d_log_sigma[0][i] ==
          doctest::Approx(0.3 / (w * h)).epsilon(1e-12));
  }
}

TEST_CASE("frozen parameter groups come back with zero gradients") {
  Fixture f = make_fixture();
  SUBCASE("stage 1 freezes the sigma rasters") {
    f.state.stage = 1;
    const GradientRecord rec =
        gradients(f.state, f.view(), f.noise, f.weights, f.cfg);
    for (const auto& r : rec.d_log_sigma) {
      for (const double x : r) CHECK(x == 0.0);
    }
  }
  SUBCASE("stage 2 freezes means and poses") {
    f.state.stage = 2;
    const GradientRecord rec =
        gradients(f.state, f.view(), f.noise, f.weights, f.cfg);
    for (const auto& r : rec.d_mean) {
      for (const double x : r) CHECK(x == 0.0);
    }
    for (const auto& p : rec.d_pose) CHECK(p.cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("an all-frozen state yields an all-zero record") {
    f.state.stage = 2;
    f.state.optimize_sigma = false;
    const GradientRecord rec =
        gradients(f.state, f.view(), f.noise, f.weights, f.cfg);
    CHECK(rec.max_abs() == 0.0);
  }
}

TEST_CASE("two-stage optimization freezes parameters bit-exactly") {
  Fixture f = make_fixture(8, 6, 11);
  TwoStageConfig cfg;
  cfg.objective = f.cfg;
  cfg.stage1_steps = 3;
  cfg.stage2_steps = 3;
  cfg.adam.lr = 1e-3;
  cfg.init_depth = 5.0;
  cfg.init_sigma = 0.1;

  const OptimizeResult res =
      optimize_two_stage(f.view(), cfg, 99);
  CHECK_FALSE(res.diverged);
  REQUIRE(res.history.size() == 6);

  // Stage 2 leaves the mean rasters bit-identical: re-run stage 1 alone.
  TwoStageConfig stage1_only = cfg;
  stage1_only.stage2_steps = 0;
  const OptimizeResult res1 = optimize_two_stage(f.view(), stage1_only, 99);
  for (std::size_t t = 0; t < res.depth.size(); ++t) {
    for (std::size_t i = 0; i < res.depth[t].mean.size(); ++i) {
      CHECK(res.depth[t].mean[i] == res1.depth[t].mean[i]);
    }
  }
  for (std::size_t k = 0; k < res.poses.size(); ++k) {
    CHECK((res.poses[k].rotation - res1.poses[k].rotation)
              .cwiseAbs()
              .maxCoeff() == 0.0);
  }
  // And stage 1 left the sigma parameters at their initialization.
  for (const auto& d : res1.depth) {
    for (const double s : d.std) CHECK(s == doctest::Approx(0.1));
  }
}

TEST_CASE("fixed point: truth-initialized optimization stays put") {
  SceneSpec spec = gradcheck_scene_spec(16, 12);
  spec.texture.contrast = 0.45;
  const Scene scene = synth_scene(spec, 21);
  SceneView view{scene.frames, scene.intrinsics};

  TwoStageConfig cfg;
  cfg.objective.grid_n_c = 4;
  cfg.objective.grid_n_r = 4;
  cfg.stage1_steps = 300;
  cfg.stage2_steps = 0;
  cfg.adam.lr = 1e-3;
  cfg.init_sigma = 0.02;

  // Start at the ground truth with the true pose.
  OptimState state = OptimState::initial(16, 12, spec.frame_count, 5.0, 0.02);
  for (int t = 0; t < spec.frame_count; ++t) {
    state.frames[t].mean = scene.gt_depth[t];
  }
  PoseParams pose;
  pose.axis_angle = spec.step_axis_angle;
  pose.translation = spec.step_translation;
  state.poses = {pose};
  state.stage = 1;
  const OptimState init_state = state;

  GridSpec grid{4, 4, 1, 1};
  const StepNoise probe_noise =
      StepNoise::draw(16, 12, spec.frame_count, grid, 8888);
  const double init_loss =
      total_loss(init_state, view, probe_noise, LossWeights{}, cfg.objective)
          .total;

  std::mt19937_64 rng(5150);
  long stage_t = 0;
  for (int step = 0; step < 300; ++step) {
    const StepNoise noise =
        StepNoise::draw(16, 12, spec.frame_count, grid, rng());
    GradientRecord grad;
    total_loss_with_gradients(state, view, noise, LossWeights{},
                              cfg.objective, grad);
    ++stage_t;
    // Adam update identical to the optimizer's stage-1 depth path.
    for (int t = 0; t < spec.frame_count; ++t) {
      for (std::size_t i = 0; i < state.frames[t].mean.size(); ++i) {
        auto& m = state.m_mean[t][i];
        auto& v = state.v_mean[t][i];
        m = 0.9 * m + 0.1 * grad.d_mean[t][i];
        v = 0.999 * v + 0.001 * grad.d_mean[t][i] * grad.d_mean[t][i];
        const double mh = m / (1 - std::pow(0.9, stage_t));
        const double vh = v / (1 - std::pow(0.999, stage_t));
        state.frames[t].mean[i] -= cfg.adam.lr * mh / (std::sqrt(vh) + 1e-8);
      }
    }
  }
  // Evaluated under one fixed noise draw, the loss did not increase, and
  // the means barely moved off the truth.
  const double final_loss =
      total_loss(state, view, probe_noise, LossWeights{}, cfg.objective).total;
  CHECK(final_loss <= init_loss * 1.02 + 1e-9);
  double worst = 0.0;
  for (int t = 0; t < spec.frame_count; ++t) {
    for (std::size_t i = 0; i < state.frames[t].mean.size(); ++i) {
      worst = std::max(
          worst, std::abs(state.frames[t].mean[i] - scene.gt_depth[t][i]));
    }
  }
  CHECK(worst < 0.15);
}

TEST_CASE("history rows keep the breakdown identity") {
  Fixture f = make_fixture(8, 6, 17);
  TwoStageConfig cfg;
  cfg.objective = f.cfg;
  cfg.stage1_steps = 4;
  cfg.stage2_steps = 2;
  const OptimizeResult res = optimize_two_stage(f.view(), cfg, 3);
  REQUIRE(res.history.size() == 6);
  for (const auto& row : res.history) {
    CHECK(row.loss.total ==
          doctest::Approx(row.loss.img + 0.3 * row.loss.mw +
                          0.001 * row.loss.smooth + 0.3 * row.loss.std)
              .epsilon(1e-10));
  }
  CHECK(res.history[3].stage == 1);
  CHECK(res.history[4].stage == 2);
}

TEST_CASE("elbo_check on the tractable toy family") {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> unit(0.3, 2.0);
  std::uniform_real_distribution<double> wide(-2.0, 2.0);

  SUBCASE("posterior-matched q closes the gap") {
    for (int trial = 0; trial < 20; ++trial) {
      GaussianToy toy;
      toy.prior_mean = wide(rng);
      toy.prior_std = unit(rng);
      toy.slope = unit(rng);
      toy.intercept = wide(rng);
      toy.obs_std = unit(rng);
      toy.observation = wide(rng);
      const auto [mp, sp] = exact_posterior(toy);
      toy.q_mean = mp;
      toy.q_std = sp;
      const ElboReport rep = elbo_check(toy, 20000, 100 + trial);
      CHECK(std::abs(rep.gap) <= 3.0 * rep.mc_std_error);
    }
  }
  SUBCASE("a shifted q opens a gap equal to the KL divergence") {
    for (int trial = 0; trial < 20; ++trial) {
      GaussianToy toy;
      toy.prior_mean = wide(rng);
      toy.prior_std = unit(rng);
      toy.slope = unit(rng);
      toy.obs_std = unit(rng);
      toy.observation = wide(rng);
      const auto [mp, sp] = exact_posterior(toy);
      toy.q_mean = mp + 0.7;
      toy.q_std = sp * 1.3;
      const ElboReport rep = elbo_check(toy, 40000, 300 + trial);
      const double kl = kl_to_posterior(toy);
      CHECK(kl > 0.0);
      CHECK(std::abs(rep.gap - kl) <= 3.0 * rep.mc_std_error);
    }
  }
  SUBCASE("the bound holds across random toys") {
    for (int trial = 0; trial < 100; ++trial) {
      GaussianToy toy;
      toy.prior_mean = wide(rng);
      toy.prior_std = unit(rng);
      toy.slope = unit(rng);
      toy.intercept = wide(rng);
      toy.obs_std = unit(rng);
      toy.observation = wide(rng);
      toy.q_mean = wide(rng);
      toy.q_std = unit(rng);
      const ElboReport rep = elbo_check(toy, 5000, 500 + trial);
      CHECK(rep.elbo <= rep.log_evidence + 3.0 * rep.mc_std_error);
    }
  }
}
