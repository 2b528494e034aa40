#include "vdepth/io.hpp"

#include <png.h>

#include <bit>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <nlohmann/json.hpp>

static_assert(std::endian::native == std::endian::little,
              "raster serialization assumes a little-endian host");

namespace vdepth {

using nlohmann::json;

namespace {

void write_binary(const std::filesystem::path& path,
                  std::span<const float> data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot open for writing: " + path.string());
  }
  out.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(float)));
  if (!out) throw std::runtime_error("short write: " + path.string());
}

std::vector<float> read_binary(const std::filesystem::path& path,
                               std::size_t count) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open for reading: " + path.string());
  }
  std::vector<float> data(count);
  in.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(count * sizeof(float)));
  if (in.gcount() != static_cast<std::streamsize>(count * sizeof(float))) {
    throw std::runtime_error("short read: " + path.string());
  }
  return data;
}

json read_sidecar(const std::filesystem::path& path) {
  const auto sidecar = path.string() + ".json";
  return json::parse(read_text_file(sidecar));
}

void write_sidecar(const std::filesystem::path& path, int width, int height,
                   int channels, std::string_view units) {
  json j;
  j["width"] = width;
  j["height"] = height;
  j["channels"] = channels;
  j["units"] = units;
  write_text_file(path.string() + ".json", j.dump(2) + "\n");
}

}  // namespace

void write_raster(const std::filesystem::path& path, const Raster& r,
                  std::string_view units) {
  std::vector<float> data(r.size());
  for (std::size_t i = 0; i < r.size(); ++i) {
    data[i] = static_cast<float>(r[i]);
  }
  write_binary(path, data);
  write_sidecar(path, r.width(), r.height(), 1, units);
}

Raster read_raster(const std::filesystem::path& path) {
  const json meta = read_sidecar(path);
  const int w = meta.at("width").get<int>();
  const int h = meta.at("height").get<int>();
  if (meta.at("channels").get<int>() != 1) {
    throw std::runtime_error("read_raster: expected a single channel: " +
                             path.string());
  }
  const auto data = read_binary(path, static_cast<std::size_t>(w) * h);
  Raster r(w, h);
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = data[i];
  return r;
}

void write_image_raw(const std::filesystem::path& path, const Image& img) {
  std::vector<float> data(img.channel[0].size() * 3);
  std::size_t k = 0;
  for (int v = 0; v < img.height(); ++v) {
    for (int u = 0; u < img.width(); ++u) {
      for (int c = 0; c < 3; ++c) {
        data[k++] = static_cast<float>(img.channel[c](u, v));
      }
    }
  }
  write_binary(path, data);
  write_sidecar(path, img.width(), img.height(), 3, "intensity");
}

Image read_image_raw(const std::filesystem::path& path) {
  const json meta = read_sidecar(path);
  const int w = meta.at("width").get<int>();
  const int h = meta.at("height").get<int>();
  if (meta.at("channels").get<int>() != 3) {
    throw std::runtime_error("read_image_raw: expected 3 channels: " +
                             path.string());
  }
  const auto data = read_binary(path, static_cast<std::size_t>(w) * h * 3);
  Image img(w, h);
  std::size_t k = 0;
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      for (int c = 0; c < 3; ++c) img.channel[c](u, v) = data[k++];
    }
  }
  return img;
}

void write_image_png(const std::filesystem::path& path, const Image& img) {
  FILE* fp = std::fopen(path.string().c_str(), "wb");
  if (!fp) throw std::runtime_error("cannot open for writing: " + path.string());
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
    std::fclose(fp);
    throw std::runtime_error("libpng failure writing " + path.string());
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, img.width(), img.height(), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_byte> row(static_cast<std::size_t>(img.width()) * 3);
  for (int v = 0; v < img.height(); ++v) {
    for (int u = 0; u < img.width(); ++u) {
      for (int c = 0; c < 3; ++c) {
        const double x = std::clamp(img.channel[c](u, v), 0.0, 1.0);
        row[static_cast<std::size_t>(u) * 3 + c] =
            static_cast<png_byte>(std::lround(x * 255.0));
      }
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

Image read_image_png(const std::filesystem::path& path) {
  FILE* fp = std::fopen(path.string().c_str(), "rb");
  if (!fp) throw std::runtime_error("cannot open for reading: " + path.string());
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
    std::fclose(fp);
    throw std::runtime_error("libpng failure reading " + path.string());
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  // Normalize whatever arrives to 8-bit RGB.
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  if (png_get_channels(png, info) != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw std::runtime_error("read_image_png: expected RGB: " + path.string());
  }
  Image img(w, h);
  std::vector<png_byte> row(static_cast<std::size_t>(w) * 3);
  for (int v = 0; v < h; ++v) {
    png_read_row(png, row.data(), nullptr);
    for (int u = 0; u < w; ++u) {
      for (int c = 0; c < 3; ++c) {
        img.channel[c](u, v) =
            row[static_cast<std::size_t>(u) * 3 + c] / 255.0;
      }
    }
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return img;
}

std::string intrinsics_to_json(const CameraIntrinsics& k) {
  json j;
  j["fx"] = k.fx;
  j["fy"] = k.fy;
  j["cx"] = k.cx;
  j["cy"] = k.cy;
  j["width"] = k.width;
  j["height"] = k.height;
  return j.dump(2) + "\n";
}

CameraIntrinsics intrinsics_from_json(const std::string& text) {
  const json j = json::parse(text);
  CameraIntrinsics k;
  k.fx = j.at("fx").get<double>();
  k.fy = j.at("fy").get<double>();
  k.cx = j.at("cx").get<double>();
  k.cy = j.at("cy").get<double>();
  k.width = j.at("width").get<int>();
  k.height = j.at("height").get<int>();
  k.validate();
  return k;
}

void save_intrinsics(const std::filesystem::path& path,
                     const CameraIntrinsics& k) {
  write_text_file(path, intrinsics_to_json(k));
}

CameraIntrinsics load_intrinsics(const std::filesystem::path& path) {
  return intrinsics_from_json(read_text_file(path));
}

void save_poses(const std::filesystem::path& path,
                std::span<const RigidTransform> poses) {
  json arr = json::array();
  for (const auto& p : poses) {
    json e;
    e["rotation"] = std::vector<double>(
        p.rotation.data(), p.rotation.data() + 9);  // column-major
    e["translation"] =
        std::vector<double>{p.translation.x(), p.translation.y(),
                            p.translation.z()};
    arr.push_back(e);
  }
  json j;
  j["poses"] = arr;
  write_text_file(path, j.dump(2) + "\n");
}

std::vector<RigidTransform> load_poses(const std::filesystem::path& path) {
  const json j = json::parse(read_text_file(path));
  std::vector<RigidTransform> poses;
  for (const auto& e : j.at("poses")) {
    RigidTransform p;
    const auto rot = e.at("rotation").get<std::vector<double>>();
    if (rot.size() != 9) throw std::runtime_error("load_poses: bad rotation");
    for (int i = 0; i < 9; ++i) p.rotation.data()[i] = rot[i];
    const auto tr = e.at("translation").get<std::vector<double>>();
    if (tr.size() != 3) throw std::runtime_error("load_poses: bad translation");
    p.translation = Eigen::Vector3d(tr[0], tr[1], tr[2]);
    poses.push_back(p);
  }
  return poses;
}

void write_loss_history_csv(const std::filesystem::path& path,
                            std::span<const LossHistoryRow> history) {
  std::ostringstream out;
  out << "step,stage,total,img,mw,smooth,std\n";
  out << std::setprecision(12);
  for (const auto& row : history) {
    out << row.step << ',' << row.stage << ',' << row.loss.total << ','
        << row.loss.img << ',' << row.loss.mw << ',' << row.loss.smooth << ','
        << row.loss.std << '\n';
  }
  write_text_file(path, out.str());
}

void write_metrics_csv(
    const std::filesystem::path& path,
    std::span<const std::pair<std::string, MetricReport>> rows) {
  std::ostringstream out;
  out << "label,abs_rel,sq_rel,rmse,rmse_log,d1,d2,d3,valid_count\n";
  out << std::setprecision(9);
  for (const auto& [label, r] : rows) {
    out << label << ',' << r.abs_rel << ',' << r.sq_rel << ',' << r.rmse << ','
        << r.rmse_log << ',' << r.d1 << ',' << r.d2 << ',' << r.d3 << ','
        << r.valid_count << '\n';
  }
  write_text_file(path, out.str());
}

std::string metrics_to_json(
    std::span<const std::pair<std::string, MetricReport>> rows) {
  json arr = json::array();
  for (const auto& [label, r] : rows) {
    json e;
    e["label"] = label;
    e["abs_rel"] = r.abs_rel;
    e["sq_rel"] = r.sq_rel;
    e["rmse"] = r.rmse;
    e["rmse_log"] = r.rmse_log;
    e["d1"] = r.d1;
    e["d2"] = r.d2;
    e["d3"] = r.d3;
    e["valid_count"] = r.valid_count;
    arr.push_back(e);
  }
  return arr.dump(2) + "\n";
}

void write_plan_csv(const std::filesystem::path& path,
                    const TransportPlan& plan) {
  std::ostringstream out;
  out << "i,j,weight\n";
  out << std::setprecision(12);
  for (Eigen::Index i = 0; i < plan.coupling.rows(); ++i) {
    for (Eigen::Index j = 0; j < plan.coupling.cols(); ++j) {
      out << i << ',' << j << ',' << plan.coupling(i, j) << '\n';
    }
  }
  write_text_file(path, out.str());
}

std::string solver_stats_json(const TransportPlan& plan) {
  json j;
  j["value"] = plan.value;
  j["row_residual"] = plan.row_residual;
  j["col_residual"] = plan.col_residual;
  j["iterations"] = plan.iterations;
  return j.dump(2) + "\n";
}

void write_text_file(const std::filesystem::path& path,
                     std::string_view content) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("cannot open for writing: " + path.string());
  }
  out << content;
  if (!out) throw std::runtime_error("short write: " + path.string());
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open for reading: " + path.string());
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (const char c : text) {
    hash ^= static_cast<unsigned char>(c);
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

}  // namespace vdepth
