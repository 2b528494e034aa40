#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "vdepth/evalkit.hpp"
#include "vdepth/objective.hpp"
#include "vdepth/refine.hpp"
#include "vdepth/scene.hpp"

namespace vdepth {

struct RefineStageConfig {
  bool enabled = true;
  RefineConfig refine;
  bool flip = false;  // run the flipped-input estimate and combine first
};

struct EvalConfig {
  double cap = kDefaultDepthCap;
  double sigma_floor = kDefaultSigmaFloor;
  std::vector<double> percentages{0.0, 5.0, 10.0, 15.0, 20.0, 30.0};
  bool median_scale = false;
};

struct ExperimentConfig {
  std::uint64_t seed = 7;
  SceneSpec scene;
  TwoStageConfig train;
  bool init_pose_from_gt = true;
  RefineStageConfig refine;
  EvalConfig eval;
};

/// The bundled desk-scale experiment: a textured slanted plane with a
/// weak-texture band, three frames, 64x48.
ExperimentConfig bundled_slanted_plane_config();

std::string experiment_config_to_json(const ExperimentConfig& cfg);
ExperimentConfig experiment_config_from_json(const std::string& text);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
void save_experiment_config(const std::filesystem::path& path,
                            const ExperimentConfig& cfg);

struct ExperimentResult {
  Scene scene;
  OptimizeResult optimize;
  std::vector<Raster> refined;  // frames 1..F-1 when refinement ran
  MetricReport base_metrics;    // pooled over all frames
  std::optional<MetricReport> refined_metrics;      // pooled, refined frames
  std::optional<MetricReport> base_on_refined_frames;
  double nll_value = 0.0;
  UniformOptResult uniform;
  RemovalCurve removal;
  bool failed = false;
  std::string error;
};

/// Full pipeline: synthesize -> two-stage optimization -> optional flip /
/// refinement -> evaluation. Artifacts land under out_dir; a stage failure
/// still writes the partial artifacts plus an error manifest.
ExperimentResult run_experiment(const ExperimentConfig& cfg,
                                const std::filesystem::path& out_dir);

}  // namespace vdepth
