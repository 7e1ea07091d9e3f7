#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mpiforge/errors.hpp"
#include "mpiforge/fit.hpp"
#include "mpiforge/manifest.hpp"
#include "mpiforge/mpi.hpp"
#include "mpiforge/png_io.hpp"

namespace mpiforge {

struct DatasetSetup {
  int planes = kDefaultPlaneCount;
  int sharing = kDefaultSharingFactor;
  int padding = kDefaultCanvasPadding;
  PlaneSpacing spacing = PlaneSpacing::Disparity;
  std::vector<std::size_t> frames;  ///< indices into the manifest; empty means all
  double val_split = 0.0;  ///< fraction of non-host cameras held out when the manifest names none
  bool use_masks = true;
};

struct PreparedDataset {
  std::vector<FitFrame> frames;
  std::vector<std::size_t> frame_indices;   ///< manifest frame of each prepared frame
  std::vector<std::string> exposure_ids;    ///< camera id for each exposure row; row 0 is the host
  std::vector<CameraModel> host_views;      ///< unpadded host camera per frame
};

/// Cameras held out by a fractional split: every n-th non-host camera in manifest order.
inline std::vector<std::string> fractional_val_cameras(const DatasetManifest& m, double fraction) {
  std::vector<std::string> out;
  if (!(fraction > 0.0)) return out;
  if (!(fraction < 1.0)) throw Error(ErrorCode::InvalidArgument, "val split must lie in [0, 1)");
  const int stride = std::max(1, static_cast<int>(std::lround(1.0 / fraction)));
  int seen = 0;
  for (const auto& c : m.cameras) {
    if (c.id == m.host_camera) continue;
    if (++seen % stride == 0) out.push_back(c.id);
  }
  return out;
}

/// Load the images of the selected frames and build an initial MPI for each: planes spaced
/// between near and far, textures from the host image and front-to-back alphas 1/(D - i).
/// In a frame tagged "val" only the host view trains; every other view is held out.
inline PreparedDataset prepare_dataset(const DatasetManifest& m, const DatasetSetup& setup) {
  if (setup.planes <= 0 || setup.sharing <= 0 || setup.planes % setup.sharing != 0) {
    throw Error(ErrorCode::InvalidArgument, "plane count must be a positive multiple of the sharing factor");
  }
  if (setup.padding < 0) throw Error(ErrorCode::InvalidArgument, "padding must be non-negative");
  const int host = m.host_index();
  if (host < 0) throw Error(ErrorCode::SchemaError, "/host_camera: unknown camera id");

  PreparedDataset out;
  out.exposure_ids.push_back(m.host_camera);
  for (const auto& c : m.cameras) {
    if (c.id != m.host_camera) out.exposure_ids.push_back(c.id);
  }
  auto exposure_row = [&](const std::string& id) {
    return static_cast<int>(std::find(out.exposure_ids.begin(), out.exposure_ids.end(), id) - out.exposure_ids.begin());
  };
  std::vector<std::string> held_out = m.val_cameras;
  if (held_out.empty()) held_out = fractional_val_cameras(m, setup.val_split);
  auto is_held_out = [&](const std::string& id) {
    return std::find(held_out.begin(), held_out.end(), id) != held_out.end();
  };

  std::vector<std::size_t> indices = setup.frames;
  if (indices.empty()) {
    for (std::size_t f = 0; f < m.frames.size(); ++f) indices.push_back(f);
  }
  const std::vector<double> depths = init_planes(m.near, m.far, setup.planes, setup.spacing);
  for (std::size_t f : indices) {
    if (f >= m.frames.size()) throw Error(ErrorCode::InvalidArgument, "frame " + std::to_string(f) + " out of range");
    const ManifestFrame& mf = m.frames[f];
    const auto host_it = mf.images.find(m.host_camera);
    if (host_it == mf.images.end()) {
      throw Error(ErrorCode::SchemaError, "/frames/" + std::to_string(f) + "/images: host camera image missing");
    }
    const CameraModel host_view = m.cameras[host].camera(f);
    FitFrame frame{MpiD(setup.planes, setup.sharing, host_view.padded(setup.padding), depths), {}};

    for (const auto& [id, rel] : mf.images) {
      const int ci = m.camera_index(id);
      TrainingView v;
      v.camera_index = exposure_row(id);
      v.camera = m.cameras[ci].camera(f);
      v.image = read_rgb_unit(m.resolve(rel));
      if (v.image.width != v.camera.width || v.image.height != v.camera.height) {
        throw Error(ErrorCode::SchemaError, "/frames/" + std::to_string(f) + "/images/" + id +
                                                ": image size differs from camera size");
      }
      if (setup.use_masks) {
        if (const auto mit = mf.masks.find(id); mit != mf.masks.end()) {
          Mask mask = read_mask_png(m.resolve(mit->second));
          if (mask.width != v.image.width || mask.height != v.image.height) {
            throw Error(ErrorCode::SchemaError, "/frames/" + std::to_string(f) + "/masks/" + id +
                                                    ": mask size differs from image size");
          }
          v.mask = std::move(mask);
        }
      }
      const bool is_host = id == m.host_camera;
      v.refine_pose = !is_host;
      v.validation = !is_host && (mf.is_validation() || is_held_out(id));
      if (is_host) initialize_from_host_image(frame.mpi, v.image, host_view);
      frame.views.push_back(std::move(v));
    }
    out.frames.push_back(std::move(frame));
    out.frame_indices.push_back(f);
    out.host_views.push_back(host_view);
  }
  return out;
}

/// Parse "all", "N" or "A-B" (inclusive) into frame indices, bounded by `count`.
inline std::vector<std::size_t> parse_frame_range(const std::string& text, std::size_t count) {
  std::vector<std::size_t> out;
  if (text.empty() || text == "all") {
    for (std::size_t i = 0; i < count; ++i) out.push_back(i);
    return out;
  }
  try {
    std::size_t pos = 0;
    const unsigned long a = std::stoul(text, &pos);
    unsigned long b = a;
    if (pos < text.size()) {
      if (text[pos] != '-') throw Error(ErrorCode::InvalidArgument, "");
      std::size_t pos2 = 0;
      b = std::stoul(text.substr(pos + 1), &pos2);
      if (pos + 1 + pos2 != text.size()) throw Error(ErrorCode::InvalidArgument, "");
    }
    if (b < a || b >= count) throw Error(ErrorCode::InvalidArgument, "");
    for (unsigned long i = a; i <= b; ++i) out.push_back(i);
  } catch (const std::exception&) {
    throw Error(ErrorCode::InvalidArgument, "bad frame range '" + text + "' for " + std::to_string(count) + " frames");
  }
  return out;
}

}  // namespace mpiforge
