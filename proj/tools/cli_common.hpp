#pragma once

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mpiforge/errors.hpp"
#include "mpiforge/export_web.hpp"
#include "mpiforge/geometry.hpp"
#include "mpiforge/manifest.hpp"
#include "mpiforge/mpi.hpp"
#include "mpiforge/parallel.hpp"

namespace mpiforge::cli {

namespace fs = std::filesystem;

enum class Precision { F32, F64 };

struct GlobalConfig {
  int threads = 0;  ///< 0: MPIFORGE_THREADS, else hardware concurrency
  Precision precision = Precision::F32;
  std::uint64_t seed = 7;
  std::string log_level = "info";

  int worker_threads() const { return resolve_threads(threads); }
};

/// A subcommand handler; runs after parsing and returns the process exit code.
using Handler = std::function<int()>;

struct Command {
  CLI::App* app = nullptr;
  Handler run;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& detail) { throw Error(code, detail); }

/// Reads JSON when the file starts with '{', TOML/INI otherwise. Nested objects map to
/// subcommand sections, so {"fit": {"iters": 10}} is the JSON spelling of [fit] iters = 10.
class ConfigJsonOrToml : public CLI::ConfigTOML {
 public:
  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    std::stringstream buf;
    buf << input.rdbuf();
    const std::string text = buf.str();
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first == std::string::npos || text[first] != '{') {
      std::istringstream again(text);
      return CLI::ConfigTOML::from_config(again);
    }
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw CLI::ConversionError(std::string("config: ") + e.what());
    }
    std::vector<CLI::ConfigItem> out;
    flatten(j, "", {}, out);
    return out;
  }

 private:
  static std::string scalar(const nlohmann::json& v, const std::string& name) {
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number()) return v.dump();
    throw CLI::ConversionError("config: unsupported value for " + name);
  }

  static void flatten(const nlohmann::json& j, const std::string& name, std::vector<std::string> parents,
                      std::vector<CLI::ConfigItem>& out) {
    if (j.is_object()) {
      if (!name.empty()) parents.push_back(name);
      for (auto it = j.begin(); it != j.end(); ++it) flatten(*it, it.key(), parents, out);
      return;
    }
    CLI::ConfigItem item;
    item.name = name;
    item.parents = parents;
    if (j.is_array()) {
      for (const auto& v : j) item.inputs.push_back(scalar(v, name));
    } else {
      item.inputs.push_back(scalar(j, name));
    }
    out.push_back(std::move(item));
  }
};

inline nlohmann::json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::BadPath, path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::SchemaError, path.string() + ": " + e.what());
  }
}

inline void write_text_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  out << text;
  if (!out) fail(ErrorCode::IoError, "write failed: " + path.string());
}

inline void write_json_file(const fs::path& path, const nlohmann::json& j) { write_text_file(path, j.dump(2) + "\n"); }

inline void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (!fs::is_directory(dir)) fail(ErrorCode::BadPath, "cannot create directory " + dir.string());
}

/// "frame_0007" style names shared by every numbered output.
inline std::string numbered(const std::string& stem, std::size_t i, const std::string& ext) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "_%04zu", i);
  return stem + buf + ext;
}

/// Comma- or space-separated list of numbers.
inline std::vector<double> parse_numbers(const std::string& text, const std::string& what) {
  std::vector<double> out;
  std::string s = text;
  for (char& c : s) {
    if (c == ',') c = ' ';
  }
  std::istringstream in(s);
  std::string tok;
  while (in >> tok) {
    try {
      std::size_t pos = 0;
      out.push_back(std::stod(tok, &pos));
      if (pos != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      fail(ErrorCode::InvalidArgument, what + ": '" + tok + "' is not a number");
    }
  }
  return out;
}

/// The host view without its canvas margin: the camera a dataset image of the host was taken with.
inline CameraModel unpadded_host(const CameraModel& canvas, int padding) {
  if (padding < 0 || 2 * padding >= canvas.width || 2 * padding >= canvas.height) {
    fail(ErrorCode::InvalidArgument, "padding " + std::to_string(padding) + " does not fit the canvas");
  }
  return canvas.padded(-padding);
}

/// A --camera argument: a camera JSON file, six inline twist numbers (rx ry rz tx ty tz applied
/// on top of `base`), or a camera id looked up in `manifest` for `frame`.
inline CameraModel parse_camera(const std::string& spec, const CameraModel& base, const DatasetManifest* manifest,
                                std::size_t frame) {
  std::error_code ec;
  if (fs::is_regular_file(spec, ec)) return detail::camera_from_json(read_json_file(spec), "");
  if (spec.find_first_of("0123456789") == 0 || spec.front() == '-' || spec.front() == '.' ||
      spec.find(',') != std::string::npos) {
    const auto v = parse_numbers(spec, "camera");
    if (v.size() != 6) fail(ErrorCode::InvalidArgument, "inline camera needs 6 twist numbers, got " + std::to_string(v.size()));
    Twist xi;
    for (int i = 0; i < 6; ++i) xi[i] = v[i];
    CameraModel c = base;
    c.pose = se3_exp(xi) * base.pose;
    return c;
  }
  if (!manifest) fail(ErrorCode::BadPath, "camera '" + spec + "' is neither a file nor an inline pose (pass --dataset to use ids)");
  const int ci = manifest->camera_index(spec);
  if (ci < 0) fail(ErrorCode::InvalidArgument, "unknown camera id '" + spec + "'");
  if (frame >= manifest->frames.size()) fail(ErrorCode::OutOfRange, "frame " + std::to_string(frame) + " out of range");
  return manifest->cameras[ci].camera(frame);
}

/// Exposure table written by `fit`: {"<camera id>": {"beta": [3], "gamma": [3]}}.
inline std::optional<CameraExposure> exposure_for(const nlohmann::json& table, const std::string& id) {
  if (!table.is_object() || !table.contains(id)) return std::nullopt;
  const auto& e = table.at(id);
  CameraExposure out;
  const auto b = detail::need_numbers(detail::need(e, "beta", "/" + id), 3, "/" + id + "/beta");
  const auto g = detail::need_numbers(detail::need(e, "gamma", "/" + id), 3, "/" + id + "/gamma");
  for (int c = 0; c < 3; ++c) {
    out.beta[c] = b[c];
    out.gamma[c] = g[c];
  }
  return out;
}

inline nlohmann::json exposure_to_json(const CameraExposure& e) {
  return {{"beta", e.beta}, {"gamma", e.gamma}};
}

Command add_fit(CLI::App& root, GlobalConfig& g);
Command add_render(CLI::App& root, GlobalConfig& g);
Command add_orbit(CLI::App& root, GlobalConfig& g);
Command add_depthmap(CLI::App& root, GlobalConfig& g);
Command add_retarget(CLI::App& root, GlobalConfig& g);
Command add_rasterize(CLI::App& root, GlobalConfig& g);
Command add_synth(CLI::App& root, GlobalConfig& g);
Command add_gradcheck(CLI::App& root, GlobalConfig& g);
Command add_bench(CLI::App& root, GlobalConfig& g);
Command add_export_web(CLI::App& root, GlobalConfig& g);

}  // namespace mpiforge::cli
