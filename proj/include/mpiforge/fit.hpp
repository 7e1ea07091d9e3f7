#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mpiforge/adam.hpp"
#include "mpiforge/backward.hpp"
#include "mpiforge/image.hpp"
#include "mpiforge/loss.hpp"
#include "mpiforge/mpi.hpp"
#include "mpiforge/parallel.hpp"
#include "mpiforge/renderer.hpp"

namespace mpiforge {

struct TrainingView {
  int camera_index = 0;  ///< row of the exposure table; 0 is the reference camera
  CameraModel camera;
  ImageD image;
  std::optional<Mask> mask;
  bool validation = false;
  bool refine_pose = true;  ///< false for the host camera, whose frustum holds the planes
};

struct FitFrame {
  MpiD mpi;
  std::vector<TrainingView> views;
};

/// Upper bound on concurrently accumulated gradient copies.
inline constexpr int kGradientSlots = 8;

struct FitConfig {
  int iterations = 2000;
  double lr_start = 5e-2;  ///< alphas and textures
  double lr_end = 5e-3;
  double depth_lr_ratio = kDepthLearningRateRatio;
  double exposure_lr_ratio = 0.1;
  double pose_lr_ratio = 5e-3;
  bool adaptive_depth = false;
  bool learn_exposure = false;
  bool refine_poses = false;
  LossConfig loss;
  AdamConfig adam;
  int threads = 1;
  int val_every = 0;  ///< 0: validate after the last iteration only
  std::function<void(int iteration, const LossBreakdown&)> on_iteration;
};

struct FitHistoryRow {
  int iteration = 0;
  bool pose_step = false;
  LossBreakdown loss;
  std::optional<double> psnr_val;
};

struct FitResult {
  std::vector<MpiD> mpis;
  ExposureCoeffs exposure;
  std::vector<std::vector<CameraModel>> cameras;  ///< [frame][view], refined poses
  std::vector<FitHistoryRow> history;
  std::vector<std::string> warnings;
  std::optional<double> final_psnr_val;
};

inline void project_unit_interval(std::vector<double>& v) {
  for (double& x : v) x = std::clamp(x, 0.0, 1.0);
}

/// Pooled PSNR of the exposed renderings of every validation view.
inline std::optional<double> validation_psnr(const std::vector<FitFrame>& frames, const ExposureCoeffs& exposure,
                                             int threads = 1) {
  double sq = 0.0;
  std::size_t count = 0;
  for (const auto& f : frames) {
    for (const auto& v : f.views) {
      if (!v.validation) continue;
      const CameraExposure e = v.camera_index < static_cast<int>(exposure.size()) ? exposure[v.camera_index]
                                                                                   : CameraExposure{};
      const ImageD img = apply_exposure(render_view(f.mpi, v.camera, RenderOptions{threads}).color, e);
      sq += mean_squared_error(img, v.image) * double(img.data.size());
      count += img.data.size();
    }
  }
  if (count == 0) return std::nullopt;
  return psnr_from_mse(sq / double(count));
}

/// Direct gradient-descent fit of one MPI per frame against its training views.
/// Content steps update alphas, textures, depth residuals and exposure on the full-image loss;
/// with pose refinement every other step instead updates the non-host camera poses on the
/// background-only loss.
inline FitResult fit(std::vector<FitFrame> frames, ExposureCoeffs exposure, const FitConfig& cfg) {
  FitResult result;
  if (exposure.size() == 0) exposure = ExposureCoeffs(1);
  exposure.validate();

  struct ViewRef {
    int frame, view;
  };
  std::vector<ViewRef> train;
  std::vector<int> train_per_frame(frames.size(), 0);
  for (int f = 0; f < static_cast<int>(frames.size()); ++f) {
    for (int v = 0; v < static_cast<int>(frames[f].views.size()); ++v) {
      const auto& tv = frames[f].views[v];
      if (tv.camera_index < 0) throw Error(ErrorCode::InvalidArgument, "negative camera index");
      if (tv.camera_index >= static_cast<int>(exposure.size())) {
        exposure.cameras.resize(tv.camera_index + 1);
      }
      if (!tv.validation) {
        train.push_back({f, v});
        ++train_per_frame[f];
      }
    }
    refined_depths(frames[f].mpi);
  }
  if (train.empty()) throw Error(ErrorCode::InvalidArgument, "no training views");

  bool pose_steps = cfg.refine_poses;
  if (pose_steps) {
    std::size_t background = 0;
    for (const auto& r : train) {
      const auto& tv = frames[r.frame].views[r.view];
      if (!tv.refine_pose) continue;
      if (!tv.mask) {
        background += tv.image.pixel_count();
        continue;
      }
      for (auto m : tv.mask->data) background += (m == 0);
    }
    if (background == 0) {
      pose_steps = false;
      result.warnings.push_back("EmptyBackground: no background pixels; pose refinement disabled");
    }
  }

  // Optimizer state.
  std::vector<Adam> adam_alpha, adam_tex, adam_depth;
  for (const auto& f : frames) {
    adam_alpha.emplace_back(f.mpi.alphas.size(), cfg.adam);
    adam_tex.emplace_back(f.mpi.textures.size(), cfg.adam);
    adam_depth.emplace_back(f.mpi.planes, cfg.adam);
  }
  std::vector<Adam> adam_exposure(exposure.size(), Adam(6, cfg.adam));
  std::vector<std::vector<Adam>> adam_pose(frames.size());
  for (std::size_t f = 0; f < frames.size(); ++f) adam_pose[f].assign(frames[f].views.size(), Adam(6, cfg.adam));

  // Views accumulate into a fixed number of gradient slots, each holding a contiguous block of
  // views, and the slots are summed in order; the result does not depend on the thread count.
  const int slots = std::min(kGradientSlots, static_cast<int>(train.size()));
  struct SlotBuffers {
    std::vector<std::vector<double>> d_alphas, d_textures;
  };
  std::vector<SlotBuffers> buffers(slots);
  for (auto& b : buffers) {
    for (const auto& f : frames) {
      b.d_alphas.emplace_back(f.mpi.alphas.size(), 0.0);
      b.d_textures.emplace_back(f.mpi.textures.size(), 0.0);
    }
  }
  std::vector<ViewGradient> view_grads(train.size());

  for (int it = 0; it < cfg.iterations; ++it) {
    const bool pose_step = pose_steps && (it % 2 == 1);
    const LossRegion region = pose_step ? LossRegion::Background : LossRegion::Full;
    const double lr = decayed_learning_rate(cfg.lr_start, cfg.lr_end, it, cfg.iterations);

    for (auto& b : buffers) {
      for (auto& v : b.d_alphas) std::fill(v.begin(), v.end(), 0.0);
      for (auto& v : b.d_textures) std::fill(v.begin(), v.end(), 0.0);
    }
    try {
      parallel_chunks(slots, resolve_threads(cfg.threads), [&](int slot_begin, int slot_end, int) {
        for (int slot = slot_begin; slot < slot_end; ++slot) {
          const auto [begin, end] = chunk_range(static_cast<int>(train.size()), slots, slot);
          for (int k = begin; k < end; ++k) {
            const auto& r = train[k];
            const FitFrame& fr = frames[r.frame];
            const TrainingView& tv = fr.views[r.view];
            const double weight = 1.0 / double(train_per_frame[r.frame]);
            view_grads[k] = backward_view(fr.mpi, tv.camera, exposure[tv.camera_index], tv.image,
                                          tv.mask ? &*tv.mask : nullptr, cfg.loss, region, weight,
                                          buffers[slot].d_alphas[r.frame], buffers[slot].d_textures[r.frame]);
            view_grads[k].rendered = ImageD{};
          }
        }
      });
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NonFiniteLoss) throw;
      throw Error(ErrorCode::NonFiniteLoss, "iteration " + std::to_string(it) + (pose_step ? " (pose step)" : "") +
                                                ": " + e.detail());
    }

    LossBreakdown mean_loss;
    mean_loss.lambda_grad = cfg.loss.lambda_grad;
    mean_loss.lambda_perceptual = cfg.loss.lambda_perceptual;
    mean_loss.foreground_weight = cfg.loss.foreground_weight;
    for (const auto& g : view_grads) {
      mean_loss.l2 += g.loss.l2;
      mean_loss.grad += g.loss.grad;
      mean_loss.perceptual += g.loss.perceptual;
      mean_loss.total += g.loss.total;
    }
    const double n = double(view_grads.size());
    mean_loss.l2 /= n;
    mean_loss.grad /= n;
    mean_loss.perceptual /= n;
    mean_loss.total /= n;
    if (!std::isfinite(mean_loss.total)) {
      std::ostringstream os;
      os << "iteration " << it << (pose_step ? " (pose step)" : "") << ": l2=" << mean_loss.l2
         << " grad=" << mean_loss.grad << " perceptual=" << mean_loss.perceptual;
      throw Error(ErrorCode::NonFiniteLoss, os.str());
    }

    if (pose_step) {
      for (std::size_t k = 0; k < train.size(); ++k) {
        const auto& r = train[k];
        TrainingView& tv = frames[r.frame].views[r.view];
        if (!tv.refine_pose) continue;
        const Twist& g = view_grads[k].d_pose_twist;
        Twist delta;
        adam_pose[r.frame][r.view].update(std::span<const double>(g.data(), 6), lr * cfg.pose_lr_ratio,
                                          std::span<double>(delta.data(), 6));
        tv.camera.pose = se3_exp(delta) * tv.camera.pose;
      }
    } else {
      for (std::size_t f = 0; f < frames.size(); ++f) {
        MpiD& mpi = frames[f].mpi;
        std::vector<double> ga(mpi.alphas.size(), 0.0), gt(mpi.textures.size(), 0.0);
        for (const auto& b : buffers) {
          for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += b.d_alphas[f][i];
          for (std::size_t i = 0; i < gt.size(); ++i) gt[i] += b.d_textures[f][i];
        }
        adam_alpha[f].step(mpi.alphas, ga, lr);
        adam_tex[f].step(mpi.textures, gt, lr);
        project_unit_interval(mpi.alphas);
        project_unit_interval(mpi.textures);
        if (cfg.adaptive_depth) {
          std::vector<double> gd(mpi.planes, 0.0);
          for (std::size_t k = 0; k < train.size(); ++k) {
            if (train[k].frame != static_cast<int>(f)) continue;
            for (int i = 0; i < mpi.planes; ++i) gd[i] += view_grads[k].d_depth_deltas[i];
          }
          adam_depth[f].step(mpi.depth_deltas, gd, lr * cfg.depth_lr_ratio);
          refined_depths(mpi);
#ifndef NDEBUG
          if (!strictly_ascending(refined_depths_of(mpi))) {
            throw Error(ErrorCode::InvalidRange, "plane order violated during fit");
          }
#endif
        }
      }
      if (cfg.learn_exposure) {
        std::vector<std::array<double, 6>> ge(exposure.size(), std::array<double, 6>{});
        for (std::size_t k = 0; k < train.size(); ++k) {
          const int cam = frames[train[k].frame].views[train[k].view].camera_index;
          for (int c = 0; c < 3; ++c) {
            ge[cam][c] += view_grads[k].d_beta[c] / double(frames.size());
            ge[cam][3 + c] += view_grads[k].d_gamma[c] / double(frames.size());
          }
        }
        for (std::size_t cam = 1; cam < exposure.size(); ++cam) {
          std::array<double, 6> delta{};
          adam_exposure[cam].update(ge[cam], lr * cfg.exposure_lr_ratio, delta);
          for (int c = 0; c < 3; ++c) {
            exposure[cam].beta[c] += delta[c];
            exposure[cam].gamma[c] = std::max(1e-3, exposure[cam].gamma[c] + delta[3 + c]);
          }
        }
      }
    }

    FitHistoryRow row;
    row.iteration = it;
    row.pose_step = pose_step;
    row.loss = mean_loss;
    const bool last = it + 1 == cfg.iterations;
    if (last || (cfg.val_every > 0 && it % cfg.val_every == 0)) {
      row.psnr_val = validation_psnr(frames, exposure, cfg.threads);
    }
    if (cfg.on_iteration) cfg.on_iteration(it, mean_loss);
    result.history.push_back(row);
  }

  result.final_psnr_val = validation_psnr(frames, exposure, cfg.threads);
  result.exposure = exposure;
  for (auto& f : frames) {
    std::vector<CameraModel> cams;
    for (const auto& v : f.views) cams.push_back(v.camera);
    result.cameras.push_back(std::move(cams));
    result.mpis.push_back(std::move(f.mpi));
  }
  return result;
}

/// Initial content for a direct fit: every plane carries the host image as texture and the
/// alphas split the host view evenly across planes (front plane 1/D, back plane 1).
inline void initialize_from_host_image(MpiD& mpi, const ImageD& host_image, const CameraModel& host_view) {
  const int D = mpi.planes;
  for (int i = 0; i < D; ++i) {
    const double a = 1.0 / double(D - i);
    auto al = mpi.alpha(i);
    std::fill(al.begin(), al.end(), a);
  }
  // Canvas pixels outside the host frame get the mean host colour.
  std::array<double, 3> mean{0.0, 0.0, 0.0};
  for (std::size_t p = 0; p < host_image.pixel_count(); ++p) {
    for (int c = 0; c < 3; ++c) mean[c] += host_image.data[p * 3 + c];
  }
  for (double& m : mean) m /= std::max<std::size_t>(1, host_image.pixel_count());
  const double ox = mpi.host_camera.cx() - host_view.cx();
  const double oy = mpi.host_camera.cy() - host_view.cy();
  for (int t = 0; t < mpi.texture_count(); ++t) {
    auto tex = mpi.texture(t);
    for (int y = 0; y < mpi.height; ++y) {
      for (int x = 0; x < mpi.width; ++x) {
        const int sx = static_cast<int>(std::lround(x - ox));
        const int sy = static_cast<int>(std::lround(y - oy));
        const bool inside = sx >= 0 && sy >= 0 && sx < host_image.width && sy < host_image.height;
        for (int c = 0; c < 3; ++c) {
          tex[(static_cast<std::size_t>(y) * mpi.width + x) * 3 + c] = inside ? host_image.at(sx, sy, c) : mean[c];
        }
      }
    }
  }
}

}  // namespace mpiforge
