#pragma once

// Reference implementations kept deliberately naive and separate from the library kernels.

#include <cmath>
#include <algorithm>
#include <cstdint>
#include <map>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "mpiforge/geometry.hpp"
#include "mpiforge/image.hpp"
#include "mpiforge/motion.hpp"
#include "mpiforge/mpi.hpp"

namespace oracle {

/// Direct sum-of-products form: sum_i c_i a_i prod_{j>i} (1 - a_j), layers ordered back (0) to front.
inline double eq_sum_product(const std::vector<double>& c, const std::vector<double>& a) {
  double total = 0.0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    double transmit = 1.0;
    for (std::size_t j = i + 1; j < c.size(); ++j) transmit *= 1.0 - a[j];
    total += c[i] * a[i] * transmit;
  }
  return total;
}

/// Bilinear lookup with zero outside the grid; integer coordinates are texel centres.
inline double bilinear_zero(const std::vector<double>& img, int w, int h, int channels, int c, double u, double v) {
  const int x0 = static_cast<int>(std::floor(u));
  const int y0 = static_cast<int>(std::floor(v));
  const double fx = u - x0, fy = v - y0;
  auto at = [&](int x, int y) -> double {
    if (x < 0 || y < 0 || x >= w || y >= h) return 0.0;
    const double t = img[(static_cast<std::size_t>(y) * w + x) * channels + c];
    return std::min(std::max(t, 0.0), 1.0);
  };
  return (1 - fx) * (1 - fy) * at(x0, y0) + fx * (1 - fy) * at(x0 + 1, y0) + (1 - fx) * fy * at(x0, y0 + 1) +
         fx * fy * at(x0 + 1, y0 + 1);
}

/// Per-pixel ray casting: intersect each target ray with every host-frame plane z = d_i, project the
/// hit into the host canvas, sample, and composite with eq_sum_product. Returns RGB in [0,1].
template <typename T>
mpiforge::ImageD ray_plane_render(const mpiforge::MpiT<T>& mpi, const mpiforge::CameraModel& target) {
  using mpiforge::Vector3;
  const std::vector<double> depths = mpiforge::refined_depths_of(mpi);
  std::vector<std::vector<double>> alpha_layers;
  for (int i = 0; i < mpi.planes; ++i) alpha_layers.emplace_back(mpi.alpha(i).begin(), mpi.alpha(i).end());
  const std::vector<double> textures(mpi.textures.begin(), mpi.textures.end());
  const std::size_t plane = static_cast<std::size_t>(mpi.width) * mpi.height;
  std::vector<std::vector<double>> tex_layers;
  for (int t = 0; t < mpi.texture_count(); ++t) {
    tex_layers.emplace_back(textures.begin() + plane * 3 * t, textures.begin() + plane * 3 * (t + 1));
  }

  // Target camera centre and ray directions, in host-camera coordinates.
  const Eigen::Matrix3d r_wt = target.pose.rotation.transpose();
  const Vector3 centre_w = -r_wt * target.pose.translation;
  const Vector3 centre = mpi.host_camera.pose.rotation * centre_w + mpi.host_camera.pose.translation;
  const Eigen::Matrix3d kinv = target.intrinsics.inverse();

  mpiforge::ImageD out(target.width, target.height, 3);
  for (int y = 0; y < target.height; ++y) {
    for (int x = 0; x < target.width; ++x) {
      const Vector3 dir = mpi.host_camera.pose.rotation * (r_wt * (kinv * Vector3(x, y, 1.0)));
      std::vector<double> a(mpi.planes, 0.0);
      std::vector<std::vector<double>> c(3, std::vector<double>(mpi.planes, 0.0));
      for (int i = 0; i < mpi.planes; ++i) {
        if (std::abs(dir.z()) < 1e-15) continue;
        const double lambda = (depths[i] - centre.z()) / dir.z();
        if (!(lambda > 0.0)) continue;
        const Vector3 hit = centre + lambda * dir;
        const Vector3 px = mpi.host_camera.intrinsics * hit;
        const double u = px.x() / px.z(), v = px.y() / px.z();
        // Back-to-front index for the sum-product form.
        const int k = mpi.planes - 1 - i;
        a[k] = bilinear_zero(alpha_layers[i], mpi.width, mpi.height, 1, 0, u, v);
        const auto& tex = tex_layers[i / mpi.sharing];
        for (int ch = 0; ch < 3; ++ch) c[ch][k] = bilinear_zero(tex, mpi.width, mpi.height, 3, ch, u, v);
      }
      for (int ch = 0; ch < 3; ++ch) out.at(x, y, ch) = eq_sum_product(c[ch], a);
    }
  }
  return out;
}


// Recursive depth-first retargeting reference: place every child from its placed parent.
inline void place_children(int node, const mpiforge::SkeletonTree& t, const mpiforge::KeypointList& drv,
                           const std::vector<double>& len, const mpiforge::Point2& node_pos_new,
                           const mpiforge::Point2& node_pos_drv, std::map<int, mpiforge::Point2>& out) {
  for (std::size_t e = 0; e < t.edges.size(); ++e) {
    if (t.edges[e].first != node) continue;
    const int c = t.edges[e].second;
    const mpiforge::Point2 d = drv[c].p - node_pos_drv;
    const mpiforge::Point2 pc = node_pos_new + d / d.norm() * len[e];
    out[c] = pc;
    place_children(c, t, drv, len, pc, drv[c].p, out);
  }
}

inline std::map<int, mpiforge::Point2> oracle_transfer(const mpiforge::SkeletonTree& t, const mpiforge::KeypointList& drv,
                                                       const std::vector<double>& len, const mpiforge::Point2& anchor) {
  std::map<int, mpiforge::Point2> out;
  mpiforge::Point2 root_drv = mpiforge::Point2::Zero();
  for (int r : t.root_points) root_drv += drv[r].p;
  root_drv /= double(t.root_points.size());
  const int start = t.virtual_root() ? mpiforge::SkeletonTree::kVirtualRoot : t.root_points[0];
  if (!t.virtual_root()) out[start] = anchor;
  place_children(start, t, drv, len, anchor, root_drv, out);
  return out;
}

/// Centroid-aligned mean squared landmark distance, all points visible.
inline double oracle_face_distance(const mpiforge::KeypointList& a, const mpiforge::KeypointList& b) {
  mpiforge::Point2 ca = mpiforge::Point2::Zero(), cb = mpiforge::Point2::Zero();
  for (std::size_t i = 0; i < a.size(); ++i) {
    ca += a[i].p;
    cb += b[i].p;
  }
  ca /= double(a.size());
  cb /= double(b.size());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const mpiforge::Point2 d = (a[i].p - ca) - (b[i].p - cb);
    s += d.x() * d.x() + d.y() * d.y();
  }
  return s / double(a.size());
}

}  // namespace oracle

namespace fixtures {

/// Smooth random field in [lo, hi]: a sum of a few random cosine waves.
inline void smooth_field(std::vector<double>& out, int w, int h, int channels, std::mt19937_64& rng, double lo,
                         double hi) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  out.assign(static_cast<std::size_t>(w) * h * channels, 0.0);
  for (int c = 0; c < channels; ++c) {
    double kx[3], ky[3], ph[3];
    for (int k = 0; k < 3; ++k) {
      kx[k] = (u(rng) - 0.5) * 0.6;
      ky[k] = (u(rng) - 0.5) * 0.6;
      ph[k] = 6.283185307179586 * u(rng);
    }
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double s = 0.0;
        for (int k = 0; k < 3; ++k) s += std::cos(kx[k] * x + ky[k] * y + ph[k]);
        const double t = 0.5 + s / 6.0;
        out[(static_cast<std::size_t>(y) * w + x) * channels + c] = lo + (hi - lo) * t;
      }
    }
  }
}

struct RenderScene {
  mpiforge::MpiD mpi;
  std::vector<mpiforge::CameraModel> targets;
};

/// A few planes with smooth textures and partially covering alphas, seen from nearby poses.
inline RenderScene random_render_scene(std::uint64_t seed, int planes = 4, int sharing = 2, int poses = 5) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  mpiforge::CameraModel host;
  host.width = 56;
  host.height = 44;
  host.intrinsics = mpiforge::make_intrinsics(40, 40, 27.5, 21.5);
  std::vector<double> depths(planes);
  double d = 2.0 + u(rng);
  for (int i = 0; i < planes; ++i) {
    depths[i] = d;
    d += 0.5 + u(rng);
  }
  RenderScene s{mpiforge::MpiD(planes, sharing, host, depths), {}};
  std::vector<double> field;
  for (int i = 0; i < planes; ++i) {
    smooth_field(field, host.width, host.height, 1, rng, -0.6, 1.6);
    auto a = s.mpi.alpha(i);
    for (std::size_t p = 0; p < a.size(); ++p) a[p] = std::min(std::max(field[p], 0.0), 1.0);
  }
  smooth_field(s.mpi.textures, host.width, host.height, 3 * s.mpi.texture_count(), rng, 0.0, 1.0);
  // smooth_field wrote interleaved channels of width*height*(3*T); reshape into per-texture layout.
  std::vector<double> reshaped(s.mpi.textures.size());
  const int tc = 3 * s.mpi.texture_count();
  for (std::size_t p = 0; p < s.mpi.plane_size(); ++p) {
    for (int t = 0; t < s.mpi.texture_count(); ++t) {
      for (int c = 0; c < 3; ++c) reshaped[s.mpi.plane_size() * 3 * t + p * 3 + c] = s.mpi.textures[p * tc + t * 3 + c];
    }
  }
  s.mpi.textures = std::move(reshaped);
  for (int k = 0; k < poses; ++k) {
    mpiforge::Twist xi;
    for (int j = 0; j < 3; ++j) xi[j] = 0.05 * (2 * u(rng) - 1);
    for (int j = 3; j < 6; ++j) xi[j] = 0.25 * (2 * u(rng) - 1);
    mpiforge::CameraModel cam;
    cam.width = 48;
    cam.height = 36;
    cam.intrinsics = mpiforge::make_intrinsics(36 + 8 * u(rng), 36 + 8 * u(rng), 23.5, 17.5);
    cam.pose = mpiforge::se3_exp(xi) * host.pose;
    s.targets.push_back(cam);
  }
  return s;
}


inline mpiforge::KeypointList random_points(int n, std::mt19937_64& rng, double scale = 100.0) {
  std::uniform_real_distribution<double> u(0.0, scale);
  mpiforge::KeypointList pts(n);
  for (auto& k : pts) k.p = mpiforge::Point2(u(rng), u(rng));
  return pts;
}

/// Random tree on n points: each point i > 0 picks a parent among 0..i-1, hand-style root 0.
inline mpiforge::SkeletonTree random_tree(int n, std::mt19937_64& rng) {
  mpiforge::SkeletonTree t;
  t.point_count = n;
  t.root_points = {0};
  for (int i = 1; i < n; ++i) t.edges.emplace_back(std::uniform_int_distribution<int>(0, i - 1)(rng), i);
  std::shuffle(t.edges.begin(), t.edges.end(), rng);
  return t;
}

}  // namespace fixtures
