#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vdepth/evalkit.hpp"
#include "vdepth/geometry.hpp"
#include "vdepth/image.hpp"
#include "vdepth/objective.hpp"
#include "vdepth/raster.hpp"
#include "vdepth/transport.hpp"

namespace vdepth {

/// Rasters on disk are little-endian float32, row-major, with a JSON
/// sidecar at <path>.json: {"width", "height", "channels", "units"}.
void write_raster(const std::filesystem::path& path, const Raster& r,
                  std::string_view units = "m");
Raster read_raster(const std::filesystem::path& path);

/// Three-channel float raster (channels interleaved last, RGB).
void write_image_raw(const std::filesystem::path& path, const Image& img);
Image read_image_raw(const std::filesystem::path& path);

/// 8-bit RGB PNG; values are clamped to [0, 1] and quantized on write.
void write_image_png(const std::filesystem::path& path, const Image& img);
Image read_image_png(const std::filesystem::path& path);

std::string intrinsics_to_json(const CameraIntrinsics& k);
CameraIntrinsics intrinsics_from_json(const std::string& text);
void save_intrinsics(const std::filesystem::path& path,
                     const CameraIntrinsics& k);
CameraIntrinsics load_intrinsics(const std::filesystem::path& path);

void save_poses(const std::filesystem::path& path,
                std::span<const RigidTransform> poses);
std::vector<RigidTransform> load_poses(const std::filesystem::path& path);

/// Loss history rows: step,stage,total,img,mw,smooth,std.
void write_loss_history_csv(const std::filesystem::path& path,
                            std::span<const LossHistoryRow> history);

/// Metric rows in the conventional column order: label, Abs Rel, Sq Rel,
/// RMSE, RMSE log, d1, d2, d3, valid_count.
void write_metrics_csv(
    const std::filesystem::path& path,
    std::span<const std::pair<std::string, MetricReport>> rows);
std::string metrics_to_json(
    std::span<const std::pair<std::string, MetricReport>> rows);

/// Transport plan as (i, j, weight) rows.
void write_plan_csv(const std::filesystem::path& path,
                    const TransportPlan& plan);
/// Solver stats: value, residuals, iterations.
std::string solver_stats_json(const TransportPlan& plan);

void write_text_file(const std::filesystem::path& path,
                     std::string_view content);
std::string read_text_file(const std::filesystem::path& path);

/// FNV-1a 64-bit, used to fingerprint configs in manifests.
std::uint64_t fnv1a64(std::string_view text);

}  // namespace vdepth
