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
#include "c3dm/losses.hpp"

namespace c3dm::losses {

void LossConfig::validate() const {
  if (!(epsilon_geometry > 0.0) || !(epsilon_color > 0.0)) {
    throw Error(ErrorCode::InvalidSpec, "pseudo-Huber thresholds must be positive");
  }
  if (k < 1) throw Error(ErrorCode::InvalidSpec, "k must be at least 1");
  if (n_mask_samples < 1) throw Error(ErrorCode::InvalidSpec, "n_mask_samples must be at least 1");
  if (!(mask_tolerance_px >= 0.0)) throw Error(ErrorCode::InvalidSpec, "mask tolerance must be nonnegative");
  if (!(max_clamped_fraction >= 0.0 && max_clamped_fraction <= 1.0)) {
    throw Error(ErrorCode::InvalidSpec, "max_clamped_fraction must lie in [0, 1]");
  }
  for (double s : blur_sigmas) {
    if (!(s > 0.0)) throw Error(ErrorCode::InvalidSpec, "blur sigmas must be positive");
  }
}

LossWeights LossWeights::for_camera(geom::CameraKind kind) {
  LossWeights w;
  w.w_repro = kind == geom::CameraKind::Perspective ? 1.0 : 0.01;
  return w;
}

void LossWeights::validate() const {
  for (double v : {w_pr, w_alpha, w_R, w_repro, w_min_k, w_emb_align, w_mask, w_tex_photo, w_tex_percep, w_pr_basis}) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw Error(ErrorCode::InvalidSpec, "loss weights must be finite and >= 0");
  }
}

Eigen::Matrix3d translation_system_inverse(const Eigen::Matrix3Xd& rays) {
  if (rays.cols() < 2) throw Error(ErrorCode::SingularSystem, "translation solve needs at least 2 rays");
  Eigen::Matrix3d a = Eigen::Matrix3d::Zero();
  for (Eigen::Index k = 0; k < rays.cols(); ++k) {
    const Eigen::Vector3d r = rays.col(k);
    a += Eigen::Matrix3d::Identity() - r * r.transpose();
  }
  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(a);
  const Eigen::Vector3d ev = eig.eigenvalues();
  if (!(ev(0) > 0.0) || ev(2) / ev(0) > kMaxTranslationCondition) {
    throw Error(ErrorCode::SingularSystem, "translation solve: rays are (near-)parallel");
  }
  return eig.eigenvectors() * ev.cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();
}

std::vector<std::string> LossBreakdown::columns() {
  return {"total", "prior", "repro", "min_k", "min_k_raw", "emb_align", "mask", "mask_hard", "texture",
          "clamped_samples", "excluded_references"};
}

std::vector<double> LossBreakdown::values() const {
  return {total,     prior, repro,     min_k,   min_k_raw, emb_align, mask,
          mask_hard, texture, static_cast<double>(clamped_samples), static_cast<double>(excluded_references)};
}

}  // namespace c3dm::losses
