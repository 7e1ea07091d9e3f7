#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mpiforge/errors.hpp"
#include "mpiforge/geometry.hpp"

namespace mpiforge {

enum class PlaneSpacing { Depth, Disparity };

/// Padding added to every side of the render frame to size the MPI canvas (360x640 -> 720x1000).
inline constexpr int kDefaultCanvasPadding = 180;
inline constexpr int kDefaultPlaneCount = 192;
inline constexpr int kDefaultSharingFactor = 12;
/// Depth residuals learn at this fraction of the texture/alpha learning rate.
inline constexpr double kDepthLearningRateRatio = 0.1;

inline int texture_index(int plane, int planes, int sharing) {
  if (sharing <= 0) throw Error(ErrorCode::InvalidArgument, "sharing factor must be positive");
  if (plane < 0 || plane >= planes) {
    throw Error(ErrorCode::OutOfRange, "plane " + std::to_string(plane) + " outside [0, " +
                                           std::to_string(planes) + ")");
  }
  return plane / sharing;
}

/// Stored channels for D alpha planes sharing one RGB texture every K planes.
constexpr int channel_count(int planes, int sharing) { return planes + 3 * (planes / sharing); }

/// Ascending plane depths between near and far, evenly spaced in depth or in disparity.
inline std::vector<double> init_planes(double near, double far, int count, PlaneSpacing spacing) {
  if (!(near > 0.0) || !(far > near)) {
    throw Error(ErrorCode::InvalidRange, "require 0 < near < far");
  }
  if (count < 2) throw Error(ErrorCode::InvalidArgument, "need at least two planes");
  std::vector<double> depths(count);
  for (int i = 0; i < count; ++i) {
    const double f = double(i) / double(count - 1);
    if (spacing == PlaneSpacing::Depth) {
      depths[i] = near + f * (far - near);
    } else {
      const double disparity = 1.0 / near + f * (1.0 / far - 1.0 / near);
      depths[i] = 1.0 / disparity;
    }
  }
  depths.front() = near;
  depths.back() = far;
  return depths;
}

/// Per-camera linear exposure model: out = clamp((in + beta) * gamma).
struct CameraExposure {
  std::array<double, 3> beta{0.0, 0.0, 0.0};
  std::array<double, 3> gamma{1.0, 1.0, 1.0};

  bool is_identity() const { return beta == std::array<double, 3>{} && gamma == std::array<double, 3>{1, 1, 1}; }
  friend bool operator==(const CameraExposure&, const CameraExposure&) = default;
};

/// Exposure per camera index; index 0 is the reference and stays at identity.
struct ExposureCoeffs {
  std::vector<CameraExposure> cameras;

  ExposureCoeffs() = default;
  explicit ExposureCoeffs(std::size_t count) : cameras(count) {}

  const CameraExposure& operator[](std::size_t i) const { return cameras.at(i); }
  CameraExposure& operator[](std::size_t i) { return cameras.at(i); }
  std::size_t size() const { return cameras.size(); }

  void validate() const {
    for (std::size_t i = 0; i < cameras.size(); ++i) {
      for (double g : cameras[i].gamma) {
        if (!(g > 0.0)) throw Error(ErrorCode::InvalidArgument, "exposure gamma must be positive");
      }
    }
    if (!cameras.empty() && !cameras[0].is_identity()) {
      throw Error(ErrorCode::InvalidArgument, "reference camera exposure must be identity");
    }
  }
};

/// Multiplane image. Plane 0 is the nearest; compositing runs from plane D-1 (back) to 0 (front).
/// Layers are stored unconstrained and clamped to [0, 1] when sampled.
template <typename T>
struct MpiT {
  int planes = 0;
  int sharing = 1;
  int width = 0;   ///< canvas width
  int height = 0;  ///< canvas height
  std::vector<T> alphas;    ///< planes * height * width
  std::vector<T> textures;  ///< (planes / sharing) * height * width * 3, interleaved RGB
  std::vector<double> init_depths;
  std::vector<double> depth_deltas;
  CameraModel host_camera;  ///< intrinsics and image size describe the canvas

  MpiT() = default;
  MpiT(int d, int k, CameraModel host, std::vector<double> depths)
      : planes(d), sharing(k), width(host.width), height(host.height),
        init_depths(std::move(depths)), host_camera(std::move(host)) {
    if (d <= 0 || k <= 0 || d % k != 0) {
      throw Error(ErrorCode::InvalidArgument, "plane count must be a positive multiple of the sharing factor");
    }
    if (static_cast<int>(init_depths.size()) != d) {
      throw Error(ErrorCode::MismatchedLayerCount, "depth count differs from plane count");
    }
    if (width <= 0 || height <= 0) throw Error(ErrorCode::InvalidArgument, "empty canvas");
    for (int i = 0; i < d; ++i) {
      if (!(init_depths[i] > 0.0) || (i > 0 && !(init_depths[i] > init_depths[i - 1]))) {
        throw Error(ErrorCode::InvalidRange, "initial depths must be positive and strictly ascending");
      }
    }
    depth_deltas.assign(d, 0.0);
    alphas.assign(plane_size() * d, T(0));
    textures.assign(plane_size() * 3 * texture_count(), T(0));
  }

  int texture_count() const { return planes / sharing; }
  std::size_t plane_size() const { return static_cast<std::size_t>(width) * height; }
  int stored_channels() const { return channel_count(planes, sharing); }

  std::span<T> alpha(int plane) { return {alphas.data() + plane_size() * plane, plane_size()}; }
  std::span<const T> alpha(int plane) const { return {alphas.data() + plane_size() * plane, plane_size()}; }
  std::span<T> texture(int tex) { return {textures.data() + plane_size() * 3 * tex, plane_size() * 3}; }
  std::span<const T> texture(int tex) const {
    return {textures.data() + plane_size() * 3 * tex, plane_size() * 3};
  }
  std::span<const T> texture_for_plane(int plane) const { return texture(texture_index(plane, planes, sharing)); }

  /// Unclamped d_init + delta; use refined_depths() for the order-preserving projection.
  double raw_depth(int plane) const { return init_depths[plane] + depth_deltas[plane]; }
  std::vector<double> current_depths() const {
    std::vector<double> d(planes);
    for (int i = 0; i < planes; ++i) d[i] = raw_depth(i);
    return d;
  }

  /// Minimum gap kept between consecutive refined depths.
  double order_margin() const {
    if (planes < 2) return 1e-4 * init_depths.front();
    return 1e-4 * (init_depths.back() - init_depths.front()) / planes;
  }
};

using Mpi = MpiT<float>;
using MpiD = MpiT<double>;

template <typename To, typename From>
MpiT<To> mpi_cast(const MpiT<From>& src) {
  MpiT<To> out;
  out.planes = src.planes;
  out.sharing = src.sharing;
  out.width = src.width;
  out.height = src.height;
  out.alphas.assign(src.alphas.begin(), src.alphas.end());
  out.textures.assign(src.textures.begin(), src.textures.end());
  out.init_depths = src.init_depths;
  out.depth_deltas = src.depth_deltas;
  out.host_camera = src.host_camera;
  return out;
}

/// Project the depth residuals so refined depths stay strictly ascending, then return them.
/// A plane pushed across a neighbour is clamped to sit order_margin() short of it; the stored
/// residual becomes the projected value, which makes a second call a no-op.
template <typename T>
std::vector<double> refined_depths(MpiT<T>& mpi) {
  const int n = mpi.planes;
  const double eps = mpi.order_margin();
  // Values already within rounding of a bound count as satisfying it; init + (c - init) need not
  // reproduce c exactly, and re-clamping those would break idempotence.
  const double slack = 1e-3 * eps;
  std::vector<double> out(n);
  double prev = 0.0;
  for (int i = 0; i < n; ++i) {
    const double proposal = mpi.raw_depth(i);
    const double lo = (i == 0) ? eps : prev + eps;
    double c = proposal;
    if (i + 1 < n && c > mpi.raw_depth(i + 1) - eps + slack) c = mpi.raw_depth(i + 1) - eps;
    if (c < lo - slack) c = lo;
    if (c != proposal) mpi.depth_deltas[i] = c - mpi.init_depths[i];
    out[i] = mpi.raw_depth(i);
    prev = out[i];
  }
  return out;
}

/// Non-mutating view of the refined depths (projection applied to a copy of the residuals).
template <typename T>
std::vector<double> refined_depths_of(const MpiT<T>& mpi) {
  MpiT<T> shallow;
  shallow.planes = mpi.planes;
  shallow.init_depths = mpi.init_depths;
  shallow.depth_deltas = mpi.depth_deltas;
  return refined_depths(shallow);
}

template <typename T>
bool strictly_ascending(const std::vector<T>& v) {
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (!(v[i] > v[i - 1])) return false;
  }
  return true;
}

}  // namespace mpiforge
