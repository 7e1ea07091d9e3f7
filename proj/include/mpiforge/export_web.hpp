#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mpiforge/errors.hpp"
#include "mpiforge/manifest.hpp"
#include "mpiforge/mpi.hpp"
#include "mpiforge/png_io.hpp"

namespace mpiforge {

inline constexpr int kBundleVersion = 1;
inline constexpr const char* kBundleFormat = "mpiforge-bundle";

struct BundleFrame {
  Mpi mpi;
  double timestamp = 0.0;
};

namespace detail {

inline int atlas_columns(int tiles) { return std::max(1, static_cast<int>(std::ceil(std::sqrt(double(tiles))))); }

inline nlohmann::json camera_to_json(const CameraModel& c) {
  nlohmann::json j;
  nlohmann::json k = nlohmann::json::array();
  for (int r = 0; r < 3; ++r) {
    for (int col = 0; col < 3; ++col) k.push_back(c.intrinsics(r, col));
  }
  j["intrinsics"] = k;
  j["pose"] = pose_to_json(c.pose);
  j["width"] = c.width;
  j["height"] = c.height;
  return j;
}

inline CameraModel camera_from_json(const nlohmann::json& j, const std::string& ptr) {
  CameraModel c;
  const auto k = need_numbers(need(j, "intrinsics", ptr), 9, ptr + "/intrinsics");
  for (int r = 0; r < 3; ++r) {
    for (int col = 0; col < 3; ++col) c.intrinsics(r, col) = k[r * 3 + col];
  }
  c.pose = pose_from_json(need(j, "pose", ptr), ptr + "/pose");
  c.width = need_int(need(j, "width", ptr), ptr + "/width");
  c.height = need_int(need(j, "height", ptr), ptr + "/height");
  return c;
}

inline nlohmann::json tile_rect(int tile, int columns, int w, int h) {
  return nlohmann::json::array({(tile % columns) * w, (tile / columns) * h, w, h});
}

}  // namespace detail

/// Viewer bundle: per frame one RGB atlas holding the D/K shared textures and one gray+alpha
/// atlas holding the D alpha layers (alpha channel; gray is constant 255), plus index.json.
/// Tiles are laid out row-major on a ceil(sqrt(n)) column grid. Layers are clamped to [0, 1]
/// and rounded to 8 bits.
inline void export_web(const std::vector<BundleFrame>& frames, const std::filesystem::path& dir) {
  if (frames.empty()) throw Error(ErrorCode::InvalidArgument, "nothing to export");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create " + dir.string() + ": " + ec.message());
  const Mpi& first = frames.front().mpi;

  nlohmann::json index;
  index["format"] = kBundleFormat;
  index["version"] = kBundleVersion;
  index["planes"] = first.planes;
  index["sharing"] = first.sharing;
  index["width"] = first.width;
  index["height"] = first.height;
  index["host_camera"] = detail::camera_to_json(first.host_camera);
  nlohmann::json jframes = nlohmann::json::array();

  for (std::size_t f = 0; f < frames.size(); ++f) {
    const Mpi& m = frames[f].mpi;
    if (m.planes != first.planes || m.sharing != first.sharing || m.width != first.width || m.height != first.height) {
      throw Error(ErrorCode::MismatchedDims, "all exported frames must share D, K and canvas size");
    }
    const int T = m.texture_count(), D = m.planes, W = m.width, H = m.height;
    const int tc = detail::atlas_columns(T), ac = detail::atlas_columns(D);
    ImageT<std::uint8_t> tex_atlas(tc * W, ((T + tc - 1) / tc) * H, 3);
    ImageT<std::uint8_t> alpha_atlas(ac * W, ((D + ac - 1) / ac) * H, 2);
    for (int t = 0; t < T; ++t) {
      const auto src = m.texture(t);
      const int ox = (t % tc) * W, oy = (t / tc) * H;
      for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
          for (int c = 0; c < 3; ++c) {
            tex_atlas.at(ox + x, oy + y, c) = quantize_unit(src[(static_cast<std::size_t>(y) * W + x) * 3 + c]);
          }
        }
      }
    }
    std::fill(alpha_atlas.data.begin(), alpha_atlas.data.end(), std::uint8_t{255});
    for (int i = 0; i < D; ++i) {
      const auto src = m.alpha(i);
      const int ox = (i % ac) * W, oy = (i / ac) * H;
      for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) alpha_atlas.at(ox + x, oy + y, 1) = quantize_unit(src[static_cast<std::size_t>(y) * W + x]);
      }
    }
    char stem[32];
    std::snprintf(stem, sizeof stem, "frame_%04zu", f);
    const std::string tex_name = std::string(stem) + "_textures.png";
    const std::string alpha_name = std::string(stem) + "_alphas.png";
    write_png(dir / tex_name, tex_atlas);
    write_png(dir / alpha_name, alpha_atlas);

    nlohmann::json jf;
    jf["timestamp"] = frames[f].timestamp;
    jf["host_camera"] = detail::camera_to_json(m.host_camera);
    jf["texture_atlas"] = tex_name;
    jf["alpha_atlas"] = alpha_name;
    const auto depths = refined_depths_of(m);
    nlohmann::json planes = nlohmann::json::array();
    for (int i = 0; i < D; ++i) {
      planes.push_back({{"depth", depths[i]}, {"rect", detail::tile_rect(i, ac, W, H)},
                        {"texture", texture_index(i, D, m.sharing)}});
    }
    nlohmann::json textures = nlohmann::json::array();
    for (int t = 0; t < T; ++t) textures.push_back({{"rect", detail::tile_rect(t, tc, W, H)}});
    jf["planes"] = planes;
    jf["textures"] = textures;
    jframes.push_back(jf);
  }
  index["frames"] = jframes;
  std::ofstream out(dir / "index.json", std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + (dir / "index.json").string());
  out << index.dump(2) << "\n";
  if (!out) throw Error(ErrorCode::IoError, "write failed: " + (dir / "index.json").string());
}

/// Read a bundle back into MPIs (8-bit layer precision).
inline std::vector<BundleFrame> import_web(const std::filesystem::path& dir) {
  using detail::need;
  std::ifstream in(dir / "index.json");
  if (!in) throw Error(ErrorCode::BadPath, (dir / "index.json").string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::SchemaError, std::string("/: ") + e.what());
  }
  if (!j.is_object()) detail::schema_fail("", "expected an object");
  if (detail::need_int(need(j, "version", ""), "/version") != kBundleVersion) {
    detail::schema_fail("/version", "unsupported bundle version");
  }
  const int D = detail::need_int(need(j, "planes", ""), "/planes");
  const int K = detail::need_int(need(j, "sharing", ""), "/sharing");
  if (D <= 0 || K <= 0 || D % K != 0) detail::schema_fail("/sharing", "plane count must be a multiple of sharing");
  const auto& jframes = need(j, "frames", "");
  if (!jframes.is_array()) detail::schema_fail("/frames", "expected an array");

  std::vector<BundleFrame> out;
  for (std::size_t f = 0; f < jframes.size(); ++f) {
    const std::string ptr = "/frames/" + std::to_string(f);
    const auto& jf = jframes[f];
    const CameraModel cam = detail::camera_from_json(need(jf, "host_camera", ptr), ptr + "/host_camera");
    const auto& planes = need(jf, "planes", ptr);
    const auto& textures = need(jf, "textures", ptr);
    if (!planes.is_array() || static_cast<int>(planes.size()) != D) detail::schema_fail(ptr + "/planes", "expected D entries");
    if (!textures.is_array() || static_cast<int>(textures.size()) != D / K) {
      detail::schema_fail(ptr + "/textures", "expected D/K entries");
    }
    std::vector<double> depths;
    for (std::size_t i = 0; i < planes.size(); ++i) {
      depths.push_back(detail::need_number(need(planes[i], "depth", ptr + "/planes/" + std::to_string(i)),
                                           ptr + "/planes/" + std::to_string(i) + "/depth"));
    }
    if (!strictly_ascending(depths)) detail::schema_fail(ptr + "/planes", "depths must ascend");
    BundleFrame bf{Mpi(D, K, cam, depths), detail::need_number(need(jf, "timestamp", ptr), ptr + "/timestamp")};
    const auto tex = read_png(dir / detail::need_string(need(jf, "texture_atlas", ptr), ptr + "/texture_atlas"));
    const auto alp = read_png(dir / detail::need_string(need(jf, "alpha_atlas", ptr), ptr + "/alpha_atlas"));
    if (tex.channels != 3 || alp.channels != 2) detail::schema_fail(ptr, "unexpected atlas channel layout");
    auto rect = [&](const nlohmann::json& e, const std::string& p, const ImageT<std::uint8_t>& atlas) {
      const auto r = detail::need_numbers(need(e, "rect", p), 4, p + "/rect");
      const int x = static_cast<int>(r[0]), y = static_cast<int>(r[1]);
      if (r[2] != cam.width || r[3] != cam.height || x < 0 || y < 0 || x + cam.width > atlas.width ||
          y + cam.height > atlas.height) {
        detail::schema_fail(p + "/rect", "tile outside atlas or wrong size");
      }
      return std::pair{x, y};
    };
    for (int t = 0; t < D / K; ++t) {
      const auto [ox, oy] = rect(textures[t], ptr + "/textures/" + std::to_string(t), tex);
      auto dst = bf.mpi.texture(t);
      for (int y = 0; y < cam.height; ++y) {
        for (int x = 0; x < cam.width; ++x) {
          for (int c = 0; c < 3; ++c) {
            dst[(static_cast<std::size_t>(y) * cam.width + x) * 3 + c] = tex.at(ox + x, oy + y, c) / 255.0f;
          }
        }
      }
    }
    for (int i = 0; i < D; ++i) {
      const auto [ox, oy] = rect(planes[i], ptr + "/planes/" + std::to_string(i), alp);
      auto dst = bf.mpi.alpha(i);
      for (int y = 0; y < cam.height; ++y) {
        for (int x = 0; x < cam.width; ++x) dst[static_cast<std::size_t>(y) * cam.width + x] = alp.at(ox + x, oy + y, 1) / 255.0f;
      }
    }
    out.push_back(std::move(bf));
  }
  return out;
}

}  // namespace mpiforge
