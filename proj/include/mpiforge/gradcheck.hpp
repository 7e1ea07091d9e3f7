#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "mpiforge/backward.hpp"
#include "mpiforge/geometry.hpp"
#include "mpiforge/loss.hpp"
#include "mpiforge/mpi.hpp"
#include "mpiforge/renderer.hpp"

namespace mpiforge {

enum class ParamClass { Alphas, Textures, DepthDeltas, PoseTwist, Beta, Gamma };

inline constexpr std::array<ParamClass, 6> kAllParamClasses{ParamClass::Alphas,      ParamClass::Textures,
                                                            ParamClass::DepthDeltas, ParamClass::PoseTwist,
                                                            ParamClass::Beta,        ParamClass::Gamma};

constexpr std::string_view param_class_name(ParamClass c) {
  switch (c) {
    case ParamClass::Alphas: return "alphas";
    case ParamClass::Textures: return "textures";
    case ParamClass::DepthDeltas: return "depth_deltas";
    case ParamClass::PoseTwist: return "pose_twist";
    case ParamClass::Beta: return "beta";
    case ParamClass::Gamma: return "gamma";
  }
  return "unknown";
}

inline std::optional<ParamClass> parse_param_class(std::string_view name) {
  for (ParamClass c : kAllParamClasses) {
    if (param_class_name(c) == name) return c;
  }
  return std::nullopt;
}

struct GradcheckScene {
  MpiD mpi;
  CameraModel camera;
  CameraExposure exposure;
  ImageD truth;
  std::optional<Mask> mask;
  LossConfig loss;
  LossRegion region = LossRegion::Full;
};

/// Random small scene: `planes` planes of size x size texels, the target camera slightly
/// rotated and translated away from the host, random truth image and foreground mask.
inline GradcheckScene random_gradcheck_scene(std::uint64_t seed, int planes = 4, int size = 8, int sharing = 2) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  CameraModel host;
  host.intrinsics = make_intrinsics(size, size, 0.5 * (size - 1), 0.5 * (size - 1));
  host.width = size;
  host.height = size;

  std::vector<double> depths(planes);
  double d = uniform(1.5, 2.0);
  for (int i = 0; i < planes; ++i) {
    depths[i] = d;
    d += uniform(0.5, 1.5);
  }

  GradcheckScene s;
  s.mpi = MpiD(planes, sharing, host, depths);
  for (double& a : s.mpi.alphas) a = uniform(0.1, 0.9);
  for (double& t : s.mpi.textures) t = uniform(0.1, 0.9);

  s.camera = host;
  Twist xi;
  for (int k = 0; k < 3; ++k) xi[k] = uniform(-0.03, 0.03);
  for (int k = 3; k < 6; ++k) xi[k] = uniform(-0.15, 0.15);
  s.camera.pose = se3_exp(xi) * host.pose;

  for (int c = 0; c < 3; ++c) {
    s.exposure.beta[c] = uniform(-0.05, 0.05);
    s.exposure.gamma[c] = uniform(0.85, 1.2);
  }
  s.truth = ImageD(size, size, 3);
  for (double& v : s.truth.data) v = uniform(0.0, 1.0);
  s.mask = Mask(size, size, 1);
  for (auto& m : s.mask->data) m = unit(rng) < 0.3 ? 1 : 0;
  s.loss.lambda_grad = 1.0;
  s.loss.foreground_weight = 10.0;
  return s;
}

struct GradcheckReport {
  ParamClass param_class = ParamClass::Alphas;
  double max_relative_error = 0.0;
  double tolerance = 1e-4;
  int checked = 0;
  int skipped = 0;  ///< parameters whose +-step interval crosses a kink of the loss
  int nudged = 0;   ///< parameters moved away from a clamp boundary before checking
  bool pass = true;
};

namespace detail {

inline double scene_loss(const GradcheckScene& s) {
  return evaluate_view_loss(s.mpi, s.camera, s.exposure, s.truth, s.mask ? &*s.mask : nullptr, s.loss, s.region).total;
}

/// Discrete state of every piecewise choice in the loss: the bilinear cell and visibility of each
/// sample, and the exposure clamp regime of each output value. Equal signatures at both ends of
/// a finite-difference interval mean the loss is smooth across it.
inline std::vector<std::int32_t> kink_signature(const GradcheckScene& s) {
  std::vector<std::int32_t> sig;
  const std::vector<double> depths = refined_depths_of(s.mpi);
  for (int i = 0; i < s.mpi.planes; ++i) {
    const PlaneWarp<double> pw = make_plane_warp<double>(s.mpi.host_camera, s.camera, depths[i]);
    sig.push_back(pw.valid ? 1 : 0);
    if (!pw.valid) continue;
    for (int y = 0; y < s.camera.height; ++y) {
      for (int x = 0; x < s.camera.width; ++x) {
        double u, v;
        Footprint<double> fp;
        if (!project(pw, double(x), double(y), u, v) || !footprint(u, v, s.mpi.width, s.mpi.height, fp)) {
          sig.push_back(INT32_MIN);
          continue;
        }
        sig.push_back(fp.x0);
        sig.push_back(fp.y0);
      }
    }
  }
  const ImageD tilde = render_view(s.mpi, s.camera).color;
  for (std::size_t p = 0; p < tilde.pixel_count(); ++p) {
    for (int c = 0; c < 3; ++c) {
      const double z = (tilde.data[p * 3 + c] + s.exposure.beta[c]) * s.exposure.gamma[c];
      sig.push_back(z < 0.0 ? -1 : (z > 1.0 ? 1 : 0));
    }
  }
  return sig;
}

inline void nudge_inward(double& v, double margin, int& nudged) {
  if (v < margin) {
    v = margin;
    ++nudged;
  } else if (v > 1.0 - margin) {
    v = 1.0 - margin;
    ++nudged;
  }
}

}  // namespace detail

/// Compare the analytic gradient of one parameter class with central differences:
/// error = max |g_analytic - g_fd| / (|g_fd| + 1e-8) over the class.
inline GradcheckReport finite_diff_check(ParamClass cls, GradcheckScene scene, double step = 1e-5,
                                         double tolerance = 1e-4) {
  GradcheckReport rep;
  rep.param_class = cls;
  rep.tolerance = tolerance;

  const double margin = 10.0 * step;
  if (cls == ParamClass::Alphas) {
    for (double& a : scene.mpi.alphas) detail::nudge_inward(a, margin, rep.nudged);
  } else if (cls == ParamClass::Textures) {
    for (double& t : scene.mpi.textures) detail::nudge_inward(t, margin, rep.nudged);
  }

  const Mask* mask = scene.mask ? &*scene.mask : nullptr;
  const auto [loss, grads] = backward_render(scene.mpi, scene.camera, scene.exposure, scene.truth, mask, scene.loss,
                                             scene.region);
  // A nonnegative loss at exactly zero sits at a global minimum, where the true gradient is zero;
  // central differences there only measure their own O(step^2) truncation term.
  const bool at_minimum = loss.total == 0.0;

  std::vector<double*> params;
  std::vector<double> analytic;
  const RigidTransform pose0 = scene.camera.pose;
  switch (cls) {
    case ParamClass::Alphas:
      for (std::size_t i = 0; i < scene.mpi.alphas.size(); ++i) {
        params.push_back(&scene.mpi.alphas[i]);
        analytic.push_back(grads.d_alphas[i]);
      }
      break;
    case ParamClass::Textures:
      for (std::size_t i = 0; i < scene.mpi.textures.size(); ++i) {
        params.push_back(&scene.mpi.textures[i]);
        analytic.push_back(grads.d_textures[i]);
      }
      break;
    case ParamClass::DepthDeltas:
      for (int i = 0; i < scene.mpi.planes; ++i) {
        params.push_back(&scene.mpi.depth_deltas[i]);
        analytic.push_back(grads.d_depth_deltas[i]);
      }
      break;
    case ParamClass::PoseTwist:
      for (int k = 0; k < 6; ++k) analytic.push_back(grads.d_pose_twist[k]);
      break;
    case ParamClass::Beta:
      for (int c = 0; c < 3; ++c) {
        params.push_back(&scene.exposure.beta[c]);
        analytic.push_back(grads.d_beta[c]);
      }
      break;
    case ParamClass::Gamma:
      for (int c = 0; c < 3; ++c) {
        params.push_back(&scene.exposure.gamma[c]);
        analytic.push_back(grads.d_gamma[c]);
      }
      break;
  }

  // Layer values only move sample values, not sample positions; the signature can still change
  // through the exposure clamp, which is covered by the same comparison.
  for (std::size_t k = 0; k < analytic.size(); ++k) {
    double plus, minus;
    std::vector<std::int32_t> sig_plus, sig_minus;
    if (cls == ParamClass::PoseTwist) {
      Twist e = Twist::Zero();
      e[k] = step;
      scene.camera.pose = se3_exp(e) * pose0;
      plus = detail::scene_loss(scene);
      sig_plus = detail::kink_signature(scene);
      scene.camera.pose = se3_exp(-e) * pose0;
      minus = detail::scene_loss(scene);
      sig_minus = detail::kink_signature(scene);
      scene.camera.pose = pose0;
    } else {
      double& p = *params[k];
      const double p0 = p;
      p = p0 + step;
      plus = detail::scene_loss(scene);
      sig_plus = detail::kink_signature(scene);
      p = p0 - step;
      minus = detail::scene_loss(scene);
      sig_minus = detail::kink_signature(scene);
      p = p0;
    }
    if (sig_plus != sig_minus) {
      ++rep.skipped;
      continue;
    }
    const double fd = at_minimum ? 0.0 : (plus - minus) / (2.0 * step);
    const double err = std::abs(analytic[k] - fd) / (std::abs(fd) + 1e-8);
    rep.max_relative_error = std::max(rep.max_relative_error, err);
    ++rep.checked;
  }
  rep.pass = rep.max_relative_error < tolerance;
  return rep;
}

}  // namespace mpiforge
