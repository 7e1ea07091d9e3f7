#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mpiforge/container.hpp"
#include "mpiforge/geometry.hpp"
#include "mpiforge/image.hpp"
#include "mpiforge/manifest.hpp"
#include "mpiforge/mpi.hpp"
#include "mpiforge/png_io.hpp"
#include "mpiforge/renderer.hpp"

namespace mpiforge {

enum class TextureKind { Smooth, Checker };

struct SynthSpec {
  std::uint64_t seed = 7;
  int planes = 3;
  int sharing = 1;
  double near = 2.0;
  double far = 6.0;
  TextureKind texture = TextureKind::Smooth;
  double texture_period_min = 10.0;  ///< smooth texture wavelengths, canvas pixels
  double texture_period_max = 30.0;
  int train_cameras = 12;  ///< including the host camera
  int val_cameras = 3;
  int width = 128;
  int height = 128;
  int padding = 40;  ///< canvas margin around the host view, per side
  double focal = 110.0;
  double baseline = 0.8;  ///< camera centres lie within this radius of the host
  bool inject_exposure = false;
  double pose_noise_rotation_deg = 0.0;  ///< maximum rotation error of reported training poses (host excluded)
  double pose_noise_translation = 0.0;   ///< maximum translation error, as a fraction of `far`
};

struct SynthScene {
  SynthSpec spec;
  MpiD truth;  ///< values are exactly representable in the f32 container
  std::vector<std::string> ids;
  std::vector<CameraModel> cameras;           ///< true poses
  std::vector<CameraModel> reported_cameras;  ///< poses written to the manifest (noisy)
  std::vector<bool> validation;
  ExposureCoeffs exposure;
  std::vector<ImageT<std::uint8_t>> images;
  std::vector<Mask> masks;
  DatasetManifest manifest;
};

namespace detail {

/// Platform-independent uniform draw in [0, 1).
inline double u01(std::mt19937_64& rng) { return double(rng() >> 11) * 0x1.0p-53; }
inline double uniform(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * u01(rng); }

struct Wave {
  double kx, ky, phase, amp;
};

inline std::vector<Wave> random_waves(std::mt19937_64& rng, int count, double min_period, double max_period) {
  std::vector<Wave> w;
  for (int i = 0; i < count; ++i) {
    const double period = uniform(rng, min_period, max_period);
    const double theta = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    const double k = 2.0 * std::numbers::pi / period;
    w.push_back({k * std::cos(theta), k * std::sin(theta), uniform(rng, 0.0, 2.0 * std::numbers::pi), uniform(rng, 0.5, 1.0)});
  }
  return w;
}

inline double eval_waves(const std::vector<Wave>& waves, double x, double y) {
  double s = 0.0, norm = 0.0;
  for (const auto& w : waves) {
    s += w.amp * std::cos(w.kx * x + w.ky * y + w.phase);
    norm += w.amp;
  }
  return norm > 0.0 ? s / norm : 0.0;
}

}  // namespace detail

/// Known layered scene and its renderings. The back plane is opaque; nearer planes carry soft
/// blobs of coverage. Every view is rendered with the reference float renderer, exposed with its
/// camera's (beta, gamma) and quantised to 8 bits.
inline SynthScene synth_scene(const SynthSpec& spec) {
  if (spec.planes < 2 || spec.sharing <= 0 || spec.planes % spec.sharing != 0) {
    throw Error(ErrorCode::InvalidArgument, "synthetic scene needs >= 2 planes and a dividing sharing factor");
  }
  if (spec.train_cameras < 2 || spec.val_cameras < 0 || spec.width <= 0 || spec.height <= 0 || spec.padding < 0) {
    throw Error(ErrorCode::InvalidArgument, "invalid synthetic camera layout");
  }
  std::mt19937_64 rng(spec.seed);
  SynthScene s;
  s.spec = spec;

  CameraModel view;
  view.width = spec.width;
  view.height = spec.height;
  view.intrinsics = make_intrinsics(spec.focal, spec.focal, 0.5 * (spec.width - 1), 0.5 * (spec.height - 1));
  const CameraModel canvas = view.padded(spec.padding);

  MpiD mpi(spec.planes, spec.sharing, canvas, init_planes(spec.near, spec.far, spec.planes, PlaneSpacing::Depth));
  for (int i = 0; i < spec.planes; ++i) {
    auto a = mpi.alpha(i);
    if (i == spec.planes - 1) {
      std::fill(a.begin(), a.end(), 1.0);
      continue;
    }
    const auto waves = detail::random_waves(rng, 3, 40.0, 90.0);
    const double bias = detail::uniform(rng, -0.35, -0.15);
    for (int y = 0; y < canvas.height; ++y) {
      for (int x = 0; x < canvas.width; ++x) {
        const double f = detail::eval_waves(waves, x, y) + bias;
        a[static_cast<std::size_t>(y) * canvas.width + x] = std::clamp(0.5 + 4.0 * f, 0.0, 1.0);
      }
    }
  }
  for (int t = 0; t < mpi.texture_count(); ++t) {
    auto tex = mpi.texture(t);
    for (int c = 0; c < 3; ++c) {
      const auto waves = detail::random_waves(rng, 4, spec.texture_period_min, spec.texture_period_max);
      const double base = detail::uniform(rng, 0.35, 0.65);
      const int cell = 6 + static_cast<int>(rng() % 6);
      const double lo = detail::uniform(rng, 0.15, 0.4), hi = detail::uniform(rng, 0.6, 0.85);
      for (int y = 0; y < canvas.height; ++y) {
        for (int x = 0; x < canvas.width; ++x) {
          double v;
          if (spec.texture == TextureKind::Smooth) {
            v = base + 0.3 * detail::eval_waves(waves, x, y);
          } else {
            v = ((x / cell + y / cell) % 2 == 0) ? lo : hi;
          }
          tex[(static_cast<std::size_t>(y) * canvas.width + x) * 3 + c] = v;
        }
      }
    }
  }
  s.truth = mpi_cast<double>(mpi_cast<float>(mpi));

  // Cameras: host first, then training and held-out views scattered in a disc around it.
  const int total = spec.train_cameras + spec.val_cameras;
  s.exposure = ExposureCoeffs(total);
  for (int k = 0; k < total; ++k) {
    CameraModel cam = view;
    if (k > 0) {
      const double r = spec.baseline * std::sqrt(detail::u01(rng));
      const double phi = detail::uniform(rng, 0.0, 2.0 * std::numbers::pi);
      const Vector3 centre(r * std::cos(phi), r * std::sin(phi), detail::uniform(rng, -0.1, 0.1) * spec.baseline);
      Twist xi = Twist::Zero();
      for (int j = 0; j < 3; ++j) xi[j] = detail::uniform(rng, -1.0, 1.0) * 0.02;
      RigidTransform pose;
      pose.rotation = se3_exp(xi).rotation;
      pose.translation = -pose.rotation * centre;
      cam.pose = pose;
    }
    s.ids.push_back("cam" + std::string(k < 10 ? "0" : "") + std::to_string(k));
    s.cameras.push_back(cam);
    s.validation.push_back(k >= spec.train_cameras);

    // Held-out views keep their true pose so they score reconstruction, not registration.
    CameraModel reported = cam;
    if (k > 0 && k < spec.train_cameras) {
      const double max_rot = spec.pose_noise_rotation_deg * std::numbers::pi / 180.0;
      const double max_t = spec.pose_noise_translation * spec.far;
      if (max_rot > 0.0 || max_t > 0.0) {
        auto direction = [&] {
          const Vector3 v(detail::uniform(rng, -1, 1), detail::uniform(rng, -1, 1), detail::uniform(rng, -1, 1));
          return Vector3(v.norm() > 1e-9 ? Vector3(v.normalized()) : Vector3::UnitX());
        };
        Twist xi;
        xi.head<3>() = direction() * max_rot * detail::u01(rng);
        const Vector3 dt = direction() * max_t * detail::u01(rng);
        reported.pose.rotation = se3_exp(xi).rotation * cam.pose.rotation;
        reported.pose.translation = cam.pose.translation + dt;
      }
    }
    s.reported_cameras.push_back(reported);

    if (spec.inject_exposure && k > 0 && k < spec.train_cameras) {
      CameraExposure& e = s.exposure[k];
      if (k == 1) {
        e.beta = {0.05, 0.0, -0.02};
        e.gamma = {1.1, 0.9, 1.0};
      } else {
        for (int c = 0; c < 3; ++c) {
          e.beta[c] = detail::uniform(rng, -0.04, 0.04);
          e.gamma[c] = detail::uniform(rng, 0.9, 1.1);
        }
      }
    }
  }

  const Mpi truth_f = mpi_cast<float>(s.truth);
  Mpi front = truth_f;
  for (int i = 1; i < front.planes; ++i) {
    for (float& a : front.alpha(i)) a = 0.0f;
  }
  for (int k = 0; k < total; ++k) {
    const RenderedImage r = render_view(truth_f, s.cameras[k]);
    s.images.push_back(quantize(apply_exposure(r.color, s.exposure[k])));
    const RenderedImage f = render_view(front, s.cameras[k]);
    Mask m(spec.width, spec.height, 1);
    for (std::size_t p = 0; p < m.data.size(); ++p) m.data[p] = f.alpha.data[p] > 0.5f ? 1 : 0;
    s.masks.push_back(std::move(m));
  }

  DatasetManifest& man = s.manifest;
  man.host_camera = s.ids[0];
  man.near = spec.near;
  man.far = spec.far;
  man.shared_intrinsics = true;
  ManifestFrame frame;
  frame.split = "train";
  for (int k = 0; k < total; ++k) {
    ManifestCamera mc;
    mc.id = s.ids[k];
    mc.intrinsics = view.intrinsics;
    mc.width = view.width;
    mc.height = view.height;
    mc.poses = {s.reported_cameras[k].pose};
    man.cameras.push_back(mc);
    frame.images[mc.id] = "images/" + mc.id + ".png";
    frame.masks[mc.id] = "masks/" + mc.id + ".png";
    if (s.validation[k]) man.val_cameras.push_back(mc.id);
  }
  man.frames.push_back(frame);
  return s;
}

/// Ground-truth sidecar: plane depths, sharing, padding, per-camera exposure and true poses.
inline nlohmann::json synth_truth_json(const SynthScene& s) {
  nlohmann::json j;
  j["seed"] = s.spec.seed;
  j["depths"] = s.truth.init_depths;
  j["planes"] = s.truth.planes;
  j["sharing"] = s.truth.sharing;
  j["padding"] = s.spec.padding;
  j["mpi"] = "truth.mpi";
  nlohmann::json cams = nlohmann::json::object();
  for (std::size_t k = 0; k < s.ids.size(); ++k) {
    nlohmann::json c;
    c["pose"] = detail::pose_to_json(s.cameras[k].pose);
    c["beta"] = s.exposure[k].beta;
    c["gamma"] = s.exposure[k].gamma;
    c["validation"] = bool(s.validation[k]);
    cams[s.ids[k]] = c;
  }
  j["cameras"] = cams;
  return j;
}

/// Write images, masks, manifest.json and the gt/ sidecar (truth.json, truth.mpi) under `dir`.
inline void write_synth_dataset(const std::filesystem::path& dir, SynthScene& s) {
  std::filesystem::create_directories(dir);
  for (std::size_t k = 0; k < s.ids.size(); ++k) {
    write_png(dir / "images" / (s.ids[k] + ".png"), s.images[k]);
    write_mask_png(dir / "masks" / (s.ids[k] + ".png"), s.masks[k]);
  }
  save_manifest(dir / "manifest.json", s.manifest);
  s.manifest.base_dir = dir;
  write_mpi(dir / "gt" / "truth.mpi", mpi_cast<float>(s.truth));
  std::ofstream out(dir / "gt" / "truth.json", std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write ground truth sidecar");
  out << synth_truth_json(s).dump(2) << "\n";
}

}  // namespace mpiforge
