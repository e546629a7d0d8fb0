/*
 * c3dm - canonical 3D deformer maps on synthetic deformable categories.
 *
 * Copyright 2026 The c3dm Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

// Camera models, rotations and rigid/similarity transforms.
//
// Functions that sit on a differentiable path are templated on the scalar
// type so they run unchanged on double and on nn::Var.

#include "c3dm/error.hpp"
#include "c3dm/tape.hpp"

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>

namespace c3dm::geom {

template <typename Scalar>
using Vec2 = Eigen::Matrix<Scalar, 2, 1>;
template <typename Scalar>
using Vec3 = Eigen::Matrix<Scalar, 3, 1>;
template <typename Scalar>
using Vec6 = Eigen::Matrix<Scalar, 6, 1>;
template <typename Scalar>
using Mat3 = Eigen::Matrix<Scalar, 3, 3>;

/// Orthonormality and determinant tolerance of a valid rotation.
inline constexpr double kRotationTolerance = 1e-9;
/// Minimum camera-frame depth accepted by the perspective projection.
inline constexpr double kMinDepth = 1e-9;

[[nodiscard]] bool is_rotation(const Eigen::Matrix3d& r, double tol = kRotationTolerance);

/// Raw 6D rotation parameters: two 3-vectors, a first.
struct Rotation6D {
  Eigen::Vector3d a = Eigen::Vector3d::UnitX();
  Eigen::Vector3d b = Eigen::Vector3d::UnitY();

  [[nodiscard]] Vec6<double> stacked() const {
    Vec6<double> v;
    v << a, b;
    return v;
  }
  static Rotation6D from_stacked(const Vec6<double>& v) { return {v.head<3>(), v.tail<3>()}; }
  /// The first two columns of `r`, which map back to `r` exactly.
  static Rotation6D from_rotation(const Eigen::Matrix3d& r) { return {r.col(0), r.col(1)}; }
};

/// Gram-Schmidt map from 6D parameters to SO(3). Columns are
/// c1 = a/|a|, c2 = normalize(b - (c1.b) c1), c3 = c1 x c2.
template <typename Scalar>
Mat3<Scalar> rotation_from_6d(const Vec6<Scalar>& v) {
  using std::sqrt;
  const Vec3<Scalar> a = v.template head<3>();
  const Vec3<Scalar> b = v.template tail<3>();
  const Scalar na = sqrt(a.squaredNorm());
  if (!(nn::value_of(na) > 1e-12)) {
    throw Error(ErrorCode::DegenerateInput, "rotation_from_6d: first vector is near zero");
  }
  const Vec3<Scalar> c1 = a / na;
  const Vec3<Scalar> u = b - c1.dot(b) * c1;
  const Scalar nu = sqrt(u.squaredNorm());
  if (!(nn::value_of(nu) > 1e-12)) {
    throw Error(ErrorCode::DegenerateInput, "rotation_from_6d: second vector is parallel to the first");
  }
  const Vec3<Scalar> c2 = u / nu;
  Mat3<Scalar> r;
  r.col(0) = c1;
  r.col(1) = c2;
  r.col(2) = c1.cross(c2);
  return r;
}

inline Eigen::Matrix3d rotation_from_6d(const Rotation6D& v) {
  return rotation_from_6d<double>(v.stacked());
}

/// Smooth rotation distance 1 - cos(theta) = (3 - tr(R^T R*)) / 2, in [0, 2].
template <typename Scalar>
Scalar rotation_distance(const Mat3<Scalar>& r, const Mat3<Scalar>& r_star) {
  const Scalar d = (Scalar(3.0) - (r.transpose() * r_star).trace()) * 0.5;
  // Round-off can push the trace of near-identical rotations above 3.
  return nn::value_of(d) < 0.0 ? Scalar(0.0) : d;
}

enum class CameraKind { Orthographic, Perspective };

struct CameraIntrinsics {
  CameraKind kind = CameraKind::Orthographic;
  /// Calibration matrix; identity and unused for orthographic cameras.
  Eigen::Matrix3d K = Eigen::Matrix3d::Identity();

  static CameraIntrinsics orthographic() { return {}; }
  static CameraIntrinsics perspective(double focal, double cx = 0.0, double cy = 0.0);
  /// Throws InvalidSpec unless K is upper triangular, invertible, K(2,2) = 1.
  static CameraIntrinsics perspective(const Eigen::Matrix3d& k);

  [[nodiscard]] bool is_perspective() const noexcept { return kind == CameraKind::Perspective; }
  [[nodiscard]] double focal() const noexcept { return K(0, 0); }
};

/// Orthographic: (x1, x2). Perspective: first two entries of K X / x3, which
/// is (f / x3)(x1, x2) plus the principal point.
template <typename Scalar>
Vec2<Scalar> project(const CameraIntrinsics& cam, const Vec3<Scalar>& x) {
  if (!cam.is_perspective()) return x.template head<2>();
  if (!(nn::value_of(x(2)) > kMinDepth)) {
    throw Error(ErrorCode::BehindCamera, "project: point is not in front of the camera");
  }
  const Eigen::Matrix3d& k = cam.K;
  const Scalar inv_z = Scalar(1.0) / x(2);
  Vec2<Scalar> y;
  y(0) = (k(0, 0) * x(0) + k(0, 1) * x(1)) * inv_z + k(0, 2);
  y(1) = (k(1, 1) * x(1)) * inv_z + k(1, 2);
  return y;
}

/// Unit direction of the projection ray through image point y:
/// K^-1 [y1 y2 1]^T normalized. Perspective cameras only.
[[nodiscard]] Eigen::Vector3d ray_direction(const CameraIntrinsics& cam, const Eigen::Vector2d& y);

struct RigidPose {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
};

template <typename Scalar>
Vec3<Scalar> apply_pose(const Mat3<Scalar>& r, const Vec3<Scalar>& t, const Vec3<Scalar>& x) {
  return r * x + t;
}

inline Eigen::Vector3d apply_pose(const RigidPose& pose, const Eigen::Vector3d& x) {
  return pose.rotation * x + pose.translation;
}

/// x -> s R x + t with s > 0.
struct SimilarityTransform {
  double scale = 1.0;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  [[nodiscard]] Eigen::Vector3d apply(const Eigen::Vector3d& x) const {
    return scale * (rotation * x) + translation;
  }
  /// Applies the transform to every column of a 3xN matrix.
  [[nodiscard]] Eigen::Matrix3Xd apply(const Eigen::Matrix3Xd& pts) const;
  /// this o other.
  [[nodiscard]] SimilarityTransform compose(const SimilarityTransform& other) const;
};

/// Rotation by `angle` radians about the unit axis.
[[nodiscard]] Eigen::Matrix3d axis_angle(const Eigen::Vector3d& axis, double angle);

}  // namespace c3dm::geom
