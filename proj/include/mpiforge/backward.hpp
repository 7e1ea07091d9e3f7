#pragma once

#include <array>
#include <span>
#include <utility>
#include <vector>

#include "mpiforge/geometry.hpp"
#include "mpiforge/image.hpp"
#include "mpiforge/loss.hpp"
#include "mpiforge/mpi.hpp"
#include "mpiforge/renderer.hpp"

namespace mpiforge {

/// Reverse-mode carriers, each shaped like its parameter.
struct GradientBundle {
  std::vector<double> d_alphas;
  std::vector<double> d_textures;
  std::vector<double> d_depth_deltas;
  Twist d_pose_twist = Twist::Zero();
  std::array<double, 3> d_beta{};
  std::array<double, 3> d_gamma{};

  static GradientBundle zeros_like(const MpiD& mpi) {
    GradientBundle g;
    g.d_alphas.assign(mpi.alphas.size(), 0.0);
    g.d_textures.assign(mpi.textures.size(), 0.0);
    g.d_depth_deltas.assign(mpi.planes, 0.0);
    return g;
  }
};

/// Per-view part of the gradient; the large layer gradients are accumulated by the caller.
struct ViewGradient {
  LossBreakdown loss;
  std::vector<double> d_depth_deltas;
  Twist d_pose_twist = Twist::Zero();
  std::array<double, 3> d_beta{};
  std::array<double, 3> d_gamma{};
  ImageD rendered;  ///< exposed rendering used for the loss
};

namespace detail {

struct TapSet {
  double v00, v10, v01, v11;
  bool live00, live10, live01, live11;  ///< inside the grid and inside the clamp range
};

inline TapSet gather_taps(const double* src, int w, int h, int channels, int c, const Footprint<double>& fp) {
  TapSet t{};
  auto tap = [&](int x, int y, double& v, bool& live) {
    if (x < 0 || y < 0 || x >= w || y >= h) {
      v = 0.0;
      live = false;
      return;
    }
    const double raw = src[(static_cast<std::size_t>(y) * w + x) * channels + c];
    v = clamp01(raw);
    live = raw >= 0.0 && raw <= 1.0;
  };
  tap(fp.x0, fp.y0, t.v00, t.live00);
  tap(fp.x0 + 1, fp.y0, t.v10, t.live10);
  tap(fp.x0, fp.y0 + 1, t.v01, t.live01);
  tap(fp.x0 + 1, fp.y0 + 1, t.v11, t.live11);
  return t;
}

inline double tap_value(const TapSet& t, double fx, double fy) { return lerp2(t.v00, t.v10, t.v01, t.v11, fx, fy); }

inline void tap_location_grad(const TapSet& t, double fx, double fy, double& du, double& dv) {
  du = (1.0 - fy) * (t.v10 - t.v00) + fy * (t.v11 - t.v01);
  dv = ((1.0 - fx) * t.v01 + fx * t.v11) - ((1.0 - fx) * t.v00 + fx * t.v10);
}

inline void scatter_taps(double* dst, int w, int channels, int c, const Footprint<double>& fp, const TapSet& t,
                         double g) {
  const double fx = fp.fx, fy = fp.fy;
  auto put = [&](int x, int y, bool live, double wgt) {
    if (live) dst[(static_cast<std::size_t>(y) * w + x) * channels + c] += g * wgt;
  };
  put(fp.x0, fp.y0, t.live00, (1.0 - fx) * (1.0 - fy));
  put(fp.x0 + 1, fp.y0, t.live10, fx * (1.0 - fy));
  put(fp.x0, fp.y0 + 1, t.live01, (1.0 - fx) * fy);
  put(fp.x0 + 1, fp.y0 + 1, t.live11, fx * fy);
}

struct PlaneRecord {
  bool hit = false;
  Footprint<double> fp;
  double hw = 1.0, u = 0.0, v = 0.0;
  double a = 0.0;
  std::array<double, 3> c{};
  std::array<double, 3> acc_before{};
  TapSet ta;
  std::array<TapSet, 3> tc;
};

}  // namespace detail

/// Render `camera`, evaluate the loss against `truth`, and back-propagate. Layer gradients are
/// added (times `weight`) into d_alphas / d_textures; the returned per-view terms are unscaled
/// except for `weight`. The pose gradient is for exp(xi) * pose at xi = 0.
inline ViewGradient backward_view(const MpiD& mpi, const CameraModel& camera, const CameraExposure& exposure,
                                  const ImageD& truth, const Mask* mask, const LossConfig& cfg, LossRegion region,
                                  double weight, std::span<double> d_alphas, std::span<double> d_textures) {
  camera.validate();
  if (truth.width != camera.width || truth.height != camera.height || truth.channels != 3) {
    throw Error(ErrorCode::SizeMismatch, "ground truth does not match the camera image size");
  }
  if (d_alphas.size() != mpi.alphas.size() || d_textures.size() != mpi.textures.size()) {
    throw Error(ErrorCode::SizeMismatch, "gradient buffers do not match the MPI");
  }
  const int D = mpi.planes, W = mpi.width, Hc = mpi.height;
  const std::vector<double> depths = refined_depths_of(mpi);

  std::vector<HomographyDerivatives> hd(D);
  std::vector<bool> valid(D, false);
  std::vector<detail::PlaneWarp<double>> warps(D);
  for (int i = 0; i < D; ++i) {
    try {
      hd[i] = plane_homography_derivatives(mpi.host_camera, camera, depths[i]);
      valid[i] = true;
      for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) warps[i].h[r * 3 + c] = hd[i].h(r, c);
      }
      warps[i].valid = true;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::DegeneratePlane) throw;
    }
  }

  // Forward pass with the same kernel as render_view.
  ImageD tilde(camera.width, camera.height, 3);
  ImageD acc_alpha(camera.width, camera.height, 1);
  detail::render_rows<double, true>(mpi, warps, depths, camera.width, 0, camera.height, tilde, acc_alpha);

  ViewGradient out;
  out.d_depth_deltas.assign(D, 0.0);
  out.rendered = ImageD(camera.width, camera.height, 3);
  for (std::size_t p = 0; p < tilde.pixel_count(); ++p) {
    for (int c = 0; c < 3; ++c) {
      const double z = (tilde.data[p * 3 + c] + exposure.beta[c]) * exposure.gamma[c];
      out.rendered.data[p * 3 + c] = detail::clamp01(z);
    }
  }
  ImageD d_hat;
  out.loss = compute_loss(out.rendered, truth, mask, cfg, region, &d_hat);

  // Exposure adjoint.
  ImageD d_tilde(camera.width, camera.height, 3);
  for (std::size_t p = 0; p < tilde.pixel_count(); ++p) {
    for (int c = 0; c < 3; ++c) {
      const double g = d_hat.data[p * 3 + c];
      if (g == 0.0) continue;
      const double shifted = tilde.data[p * 3 + c] + exposure.beta[c];
      const double z = shifted * exposure.gamma[c];
      if (z < 0.0 || z > 1.0) continue;
      out.d_beta[c] += weight * g * exposure.gamma[c];
      out.d_gamma[c] += weight * g * shifted;
      d_tilde.data[p * 3 + c] = g * exposure.gamma[c];
    }
  }

  // Compositing, sampling and warp adjoints, one pixel at a time.
  std::vector<Matrix3> d_h(D, Matrix3::Zero());
  std::vector<detail::PlaneRecord> rec(D);
  for (int y = 0; y < camera.height; ++y) {
    for (int x = 0; x < camera.width; ++x) {
      const std::size_t p = static_cast<std::size_t>(y) * camera.width + x;
      std::array<double, 3> G{d_tilde.data[p * 3], d_tilde.data[p * 3 + 1], d_tilde.data[p * 3 + 2]};
      if (G[0] == 0.0 && G[1] == 0.0 && G[2] == 0.0) continue;

      std::array<double, 3> acc{0.0, 0.0, 0.0};
      for (int i = D - 1; i >= 0; --i) {
        auto& r = rec[i];
        r.hit = false;
        r.acc_before = acc;
        if (!valid[i]) continue;
        const double* h = warps[i].h;
        r.hw = h[6] * x + h[7] * y + h[8];
        if (!(r.hw > 0.0)) continue;
        r.u = (h[0] * x + h[1] * y + h[2]) / r.hw;
        r.v = (h[3] * x + h[4] * y + h[5]) / r.hw;
        if (!detail::footprint(r.u, r.v, W, Hc, r.fp)) continue;
        r.hit = true;
        const double* a_src = mpi.alphas.data() + mpi.plane_size() * i;
        const double* c_src = mpi.texture_for_plane(i).data();
        r.ta = detail::gather_taps(a_src, W, Hc, 1, 0, r.fp);
        r.a = detail::tap_value(r.ta, r.fp.fx, r.fp.fy);
        for (int c = 0; c < 3; ++c) {
          r.tc[c] = detail::gather_taps(c_src, W, Hc, 3, c, r.fp);
          r.c[c] = detail::tap_value(r.tc[c], r.fp.fx, r.fp.fy);
          acc[c] = detail::over(acc[c], r.c[c], r.a);
        }
      }

      for (int i = 0; i < D; ++i) {
        const auto& r = rec[i];
        if (!r.hit) continue;
        double da = 0.0;
        std::array<double, 3> dc{};
        for (int c = 0; c < 3; ++c) {
          dc[c] = G[c] * r.a;
          da += G[c] * (r.c[c] - r.acc_before[c]);
          G[c] *= (1.0 - r.a);
        }
        const int tex = mpi.sharing > 0 ? i / mpi.sharing : 0;
        detail::scatter_taps(d_alphas.data() + mpi.plane_size() * i, W, 1, 0, r.fp, r.ta, weight * da);
        double du = 0.0, dv = 0.0, gu, gv;
        detail::tap_location_grad(r.ta, r.fp.fx, r.fp.fy, gu, gv);
        du += da * gu;
        dv += da * gv;
        for (int c = 0; c < 3; ++c) {
          detail::scatter_taps(d_textures.data() + mpi.plane_size() * 3 * tex, W, 3, c, r.fp, r.tc[c],
                               weight * dc[c]);
          detail::tap_location_grad(r.tc[c], r.fp.fx, r.fp.fy, gu, gv);
          du += dc[c] * gu;
          dv += dc[c] * gv;
        }
        if (!valid[i] || (du == 0.0 && dv == 0.0)) continue;
        const double px[3] = {double(x), double(y), 1.0};
        const double inv = 1.0 / r.hw;
        for (int j = 0; j < 3; ++j) {
          d_h[i](0, j) += du * px[j] * inv;
          d_h[i](1, j) += dv * px[j] * inv;
          d_h[i](2, j) -= (du * r.u + dv * r.v) * px[j] * inv;
        }
      }
    }
  }

  for (int i = 0; i < D; ++i) {
    if (!valid[i]) continue;
    out.d_depth_deltas[i] = weight * (d_h[i].cwiseProduct(hd[i].d_depth)).sum();
    for (int k = 0; k < 6; ++k) out.d_pose_twist[k] += weight * (d_h[i].cwiseProduct(hd[i].d_twist[k])).sum();
  }
  return out;
}

/// Loss and full gradient bundle for one view.
inline std::pair<LossBreakdown, GradientBundle> backward_render(const MpiD& mpi, const CameraModel& camera,
                                                                const CameraExposure& exposure, const ImageD& truth,
                                                                const Mask* mask, const LossConfig& cfg,
                                                                LossRegion region = LossRegion::Full) {
  GradientBundle g = GradientBundle::zeros_like(mpi);
  ViewGradient v = backward_view(mpi, camera, exposure, truth, mask, cfg, region, 1.0, g.d_alphas, g.d_textures);
  g.d_depth_deltas = std::move(v.d_depth_deltas);
  g.d_pose_twist = v.d_pose_twist;
  g.d_beta = v.d_beta;
  g.d_gamma = v.d_gamma;
  return {v.loss, std::move(g)};
}

/// Loss of the exposed rendering of one view (no gradients).
inline LossBreakdown evaluate_view_loss(const MpiD& mpi, const CameraModel& camera, const CameraExposure& exposure,
                                        const ImageD& truth, const Mask* mask, const LossConfig& cfg,
                                        LossRegion region = LossRegion::Full) {
  RenderedImageD r = render_view(mpi, camera, RenderOptions{1});
  return compute_loss(apply_exposure(r.color, exposure), truth, mask, cfg, region);
}

}  // namespace mpiforge
