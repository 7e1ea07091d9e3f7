#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <string>

#include <Eigen/Core>
#include <Eigen/Dense>

#include "mpiforge/errors.hpp"

namespace mpiforge {

using Matrix3 = Eigen::Matrix3d;
using Vector3 = Eigen::Vector3d;
/// Small rigid update: (rotation x, y, z, translation x, y, z).
using Twist = Eigen::Matrix<double, 6, 1>;

inline constexpr double kDegeneratePlaneEps = 1e-12;

/// x' = rotation * x + translation.
struct RigidTransform {
  Matrix3 rotation = Matrix3::Identity();
  Vector3 translation = Vector3::Zero();

  Vector3 operator()(const Vector3& x) const { return rotation * x + translation; }

  RigidTransform inverse() const {
    RigidTransform inv;
    inv.rotation = rotation.transpose();
    inv.translation = -(inv.rotation * translation);
    return inv;
  }

  /// (a * b)(x) == a(b(x))
  friend RigidTransform operator*(const RigidTransform& a, const RigidTransform& b) {
    RigidTransform out;
    out.rotation = a.rotation * b.rotation;
    out.translation = a.rotation * b.translation + a.translation;
    return out;
  }

  bool is_valid(double tol = 1e-9) const {
    if (!rotation.allFinite() || !translation.allFinite()) return false;
    const double ortho = (rotation.transpose() * rotation - Matrix3::Identity()).cwiseAbs().maxCoeff();
    return ortho <= tol && std::abs(rotation.determinant() - 1.0) <= tol;
  }
};

inline Matrix3 hat(const Vector3& w) {
  Matrix3 m;
  m << 0.0, -w.z(), w.y(),
       w.z(), 0.0, -w.x(),
       -w.y(), w.x(), 0.0;
  return m;
}

inline Vector3 vee(const Matrix3& m) { return {m(2, 1), m(0, 2), m(1, 0)}; }

/// Pinhole camera. `pose` maps world coordinates into this camera's frame.
struct CameraModel {
  Matrix3 intrinsics = Matrix3::Identity();
  RigidTransform pose;
  int width = 0;
  int height = 0;

  double fx() const { return intrinsics(0, 0); }
  double fy() const { return intrinsics(1, 1); }
  double cx() const { return intrinsics(0, 2); }
  double cy() const { return intrinsics(1, 2); }

  Vector3 center() const { return -(pose.rotation.transpose() * pose.translation); }

  void validate() const {
    if (!pose.is_valid(1e-9)) {
      throw Error(ErrorCode::InvalidCamera, "rotation is not orthonormal with determinant +1");
    }
    if (!intrinsics.allFinite() || !(intrinsics(0, 0) > 0.0) || !(intrinsics(1, 1) > 0.0) ||
        intrinsics(1, 0) != 0.0 || intrinsics(2, 0) != 0.0 || intrinsics(2, 1) != 0.0 ||
        intrinsics(2, 2) == 0.0) {
      throw Error(ErrorCode::InvalidCamera,
                  "intrinsics must be upper triangular with positive focal lengths");
    }
    if (width < 0 || height < 0) {
      throw Error(ErrorCode::InvalidCamera, "negative image size");
    }
  }

  /// Same camera with the principal point shifted by `pad` pixels and the image grown by 2*pad.
  CameraModel padded(int pad) const {
    CameraModel out = *this;
    out.intrinsics(0, 2) += pad;
    out.intrinsics(1, 2) += pad;
    out.width += 2 * pad;
    out.height += 2 * pad;
    return out;
  }
};

inline Matrix3 make_intrinsics(double fx, double fy, double cx, double cy) {
  Matrix3 k;
  k << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
  return k;
}

/// Rotation/translation taking target-camera coordinates to source-camera coordinates:
/// x_s = R * x_t + t.
inline RigidTransform relative_pose(const CameraModel& target, const CameraModel& source) {
  if (target.pose.rotation == source.pose.rotation &&
      target.pose.translation == source.pose.translation) {
    return RigidTransform{};
  }
  return source.pose * target.pose.inverse();
}

inline RigidTransform se3_exp(const Twist& xi) {
  const Vector3 w = xi.head<3>();
  const Vector3 v = xi.tail<3>();
  const double theta2 = w.squaredNorm();
  const double theta = std::sqrt(theta2);
  double a, b, c;  // sin(t)/t, (1-cos t)/t^2, (t - sin t)/t^3
  if (theta < 1e-4) {
    a = 1.0 - theta2 / 6.0 + theta2 * theta2 / 120.0;
    b = 0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0;
    c = 1.0 / 6.0 - theta2 / 120.0 + theta2 * theta2 / 5040.0;
  } else {
    a = std::sin(theta) / theta;
    b = (1.0 - std::cos(theta)) / theta2;
    c = (theta - std::sin(theta)) / (theta2 * theta);
  }
  const Matrix3 W = hat(w);
  const Matrix3 W2 = W * W;
  RigidTransform out;
  out.rotation = Matrix3::Identity() + a * W + b * W2;
  out.translation = (Matrix3::Identity() + b * W + c * W2) * v;
  return out;
}

/// Rotation logarithm. Within ~1e-6 rad of pi the axis comes from the symmetric part of R
/// and carries reduced precision (about sqrt of machine epsilon).
inline Vector3 so3_log(const Matrix3& r) {
  const double cos_theta = std::clamp((r.trace() - 1.0) * 0.5, -1.0, 1.0);
  const double theta = std::acos(cos_theta);
  const Vector3 skew = vee(r - r.transpose()) * 0.5;  // sin(theta) * axis
  if (theta < 1e-5) {
    return skew * (1.0 + theta * theta / 6.0);
  }
  if (std::numbers::pi - theta > 1e-6) {
    return skew * (theta / std::sin(theta));
  }
  const Matrix3 sym = ((r + r.transpose()) * 0.5 - cos_theta * Matrix3::Identity()) / (1.0 - cos_theta);
  Eigen::Index k;
  sym.diagonal().maxCoeff(&k);
  Vector3 axis = sym.col(k) / std::sqrt(std::max(sym(k, k), 1e-300));
  axis.normalize();
  if (axis.dot(skew) < 0.0) axis = -axis;
  return axis * theta;
}

inline Twist se3_log(const RigidTransform& T) {
  const Vector3 w = so3_log(T.rotation);
  const double theta2 = w.squaredNorm();
  const double theta = std::sqrt(theta2);
  const Matrix3 W = hat(w);
  Matrix3 v_inv;
  if (theta < 1e-4) {
    v_inv = Matrix3::Identity() - 0.5 * W + (1.0 / 12.0 + theta2 / 720.0) * W * W;
  } else {
    const double half = 0.5 * theta;
    const double coef = (1.0 - half * std::cos(half) / std::sin(half)) / theta2;
    v_inv = Matrix3::Identity() - 0.5 * W + coef * W * W;
  }
  Twist xi;
  xi.head<3>() = w;
  xi.tail<3>() = v_inv * T.translation;
  return xi;
}

namespace detail {

struct PlaneTerms {
  RigidTransform rel;  // target -> source
  Eigen::RowVector3d nR;  // n^T R
  double s;               // depth - n^T t (plane offset seen from the target center)
};

inline PlaneTerms plane_terms(const CameraModel& source, const CameraModel& target, double depth) {
  PlaneTerms p;
  p.rel = relative_pose(target, source);
  p.nR = p.rel.rotation.row(2);
  p.s = depth - p.rel.translation.z();
  return p;
}

}  // namespace detail

/// Unnormalized homography taking homogeneous target pixels to source (MPI canvas) pixels for the
/// fronto-parallel plane z_s = depth of the source camera. A target pixel sees the plane in front
/// of itself exactly when the third homogeneous coordinate of the mapped point is positive.
inline Matrix3 plane_homography_raw(const CameraModel& source, const CameraModel& target, double depth) {
  if (!(depth > 0.0)) throw Error(ErrorCode::InvalidArgument, "plane depth must be positive");
  const auto p = detail::plane_terms(source, target, depth);
  if (std::abs(p.s) < kDegeneratePlaneEps) {
    throw Error(ErrorCode::DegeneratePlane, "plane passes through the target camera center");
  }
  const Matrix3 m = p.rel.rotation + p.rel.translation * p.nR / p.s;
  if (source.intrinsics == target.intrinsics && m == Matrix3::Identity()) return m;
  return source.intrinsics * m * target.intrinsics.inverse();
}

/// plane_homography_raw scaled so that H(2,2) == 1 (left unscaled when H(2,2) is ~0).
inline Matrix3 plane_homography(const CameraModel& source, const CameraModel& target, double depth) {
  Matrix3 h = plane_homography_raw(source, target, depth);
  if (std::abs(h(2, 2)) >= kDegeneratePlaneEps) h /= h(2, 2);
  return h;
}

/// Raw homography together with its derivatives with respect to the plane depth and to a twist
/// xi that perturbs the target pose as exp(xi) * pose, evaluated at xi = 0.
struct HomographyDerivatives {
  Matrix3 h;
  Matrix3 d_depth;
  std::array<Matrix3, 6> d_twist;
};

inline HomographyDerivatives plane_homography_derivatives(const CameraModel& source,
                                                          const CameraModel& target, double depth) {
  if (!(depth > 0.0)) throw Error(ErrorCode::InvalidArgument, "plane depth must be positive");
  const auto p = detail::plane_terms(source, target, depth);
  if (std::abs(p.s) < kDegeneratePlaneEps) {
    throw Error(ErrorCode::DegeneratePlane, "plane passes through the target camera center");
  }
  const Matrix3& R = p.rel.rotation;
  const Vector3& t = p.rel.translation;
  const Matrix3 ks = source.intrinsics;
  const Matrix3 kt_inv = target.intrinsics.inverse();
  const Eigen::RowVector3d n(0.0, 0.0, 1.0);

  HomographyDerivatives out;
  out.h = ks * (R + t * p.nR / p.s) * kt_inv;
  out.d_depth = ks * (-(t * p.nR) / (p.s * p.s)) * kt_inv;

  // perturbed relative pose: rel * exp(-xi) -> dR = -R [e_k]x, dt = -R e_k
  auto dm = [&](const Matrix3& dR, const Vector3& dt) -> Matrix3 {
    const double n_dt = dt.z();
    return dR + dt * p.nR / p.s + t * (n * dR) / p.s + t * p.nR * (n_dt / (p.s * p.s));
  };
  for (int k = 0; k < 3; ++k) {
    const Vector3 e = Vector3::Unit(k);
    out.d_twist[k] = ks * dm(-R * hat(e), Vector3::Zero()) * kt_inv;
    out.d_twist[3 + k] = ks * dm(Matrix3::Zero(), -R * e) * kt_inv;
  }
  return out;
}

/// Rotation of `angle` radians about the z axis.
inline Matrix3 rotation_z(double angle) {
  return Eigen::AngleAxisd(angle, Vector3::UnitZ()).toRotationMatrix();
}

/// World->camera pose looking from `eye` towards `target` with image y pointing along `down`.
inline RigidTransform look_at(const Vector3& eye, const Vector3& target, const Vector3& down = Vector3::UnitY()) {
  const Vector3 z = (target - eye).normalized();
  const Vector3 x = down.cross(z).normalized();
  const Vector3 y = z.cross(x);
  RigidTransform cam_to_world;
  cam_to_world.rotation.col(0) = x;
  cam_to_world.rotation.col(1) = y;
  cam_to_world.rotation.col(2) = z;
  cam_to_world.translation = eye;
  return cam_to_world.inverse();
}

}  // namespace mpiforge
