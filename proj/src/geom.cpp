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
#include "c3dm/geom.hpp"

#include <cmath>

namespace c3dm::geom {

bool is_rotation(const Eigen::Matrix3d& r, double tol) {
  if (!r.allFinite()) return false;
  const double ortho = (r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  return ortho < tol && std::abs(r.determinant() - 1.0) < tol;
}

CameraIntrinsics CameraIntrinsics::perspective(double focal, double cx, double cy) {
  Eigen::Matrix3d k = Eigen::Matrix3d::Identity();
  k(0, 0) = focal;
  k(1, 1) = focal;
  k(0, 2) = cx;
  k(1, 2) = cy;
  return perspective(k);
}

CameraIntrinsics CameraIntrinsics::perspective(const Eigen::Matrix3d& k) {
  if (!k.allFinite() || k(1, 0) != 0.0 || k(2, 0) != 0.0 || k(2, 1) != 0.0 || k(2, 2) != 1.0) {
    throw Error(ErrorCode::InvalidSpec, "camera: K must be upper triangular with K(2,2) = 1");
  }
  if (std::abs(k(0, 0) * k(1, 1)) < 1e-12) {
    throw Error(ErrorCode::InvalidSpec, "camera: K is not invertible");
  }
  CameraIntrinsics cam;
  cam.kind = CameraKind::Perspective;
  cam.K = k;
  return cam;
}

Eigen::Vector3d ray_direction(const CameraIntrinsics& cam, const Eigen::Vector2d& y) {
  if (!cam.is_perspective()) {
    throw Error(ErrorCode::WrongCameraKind, "ray_direction: camera is orthographic");
  }
  const Eigen::Vector3d h(y(0), y(1), 1.0);
  const Eigen::Vector3d d = cam.K.triangularView<Eigen::Upper>().solve(h);
  return d.normalized();
}

Eigen::Matrix3Xd SimilarityTransform::apply(const Eigen::Matrix3Xd& pts) const {
  return (scale * (rotation * pts)).colwise() + translation;
}

SimilarityTransform SimilarityTransform::compose(const SimilarityTransform& other) const {
  SimilarityTransform out;
  out.scale = scale * other.scale;
  out.rotation = rotation * other.rotation;
  out.translation = scale * (rotation * other.translation) + translation;
  return out;
}

Eigen::Matrix3d axis_angle(const Eigen::Vector3d& axis, double angle) {
  return Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
}

}  // namespace c3dm::geom
