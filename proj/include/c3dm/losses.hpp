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

// Training objectives. Every loss is a template over the scalar type: double
// evaluates values, nn::Var records the computation for the reverse sweep.

#include "c3dm/error.hpp"
#include "c3dm/geom.hpp"
#include "c3dm/image.hpp"
#include "c3dm/tape.hpp"

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace c3dm::losses {

using geom::Mat3;
using geom::Vec2;
using geom::Vec3;
template <typename Scalar>
using Matrix3X = Eigen::Matrix<Scalar, 3, Eigen::Dynamic>;
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

struct LossConfig {
  /// Pseudo-Huber thresholds: geometric residuals (world units or pixels)
  /// and color residuals in [0, 1].
  double epsilon_geometry = 0.01;
  double epsilon_color = 0.1;
  /// References kept per pixel by the min-k aggregation.
  int k = 6;
  int n_mask_samples = 1000;
  /// A projection counts as inside the silhouette when it is within this
  /// many pixels of a mask pixel center.
  double mask_tolerance_px = 1.5;
  /// Reference frames with a larger fraction of clamped samples are
  /// excluded from the min-k set.
  double max_clamped_fraction = 0.5;
  /// Blur levels (pixels) added to the raw image by the multi-scale
  /// photometric comparison standing in for feature-space matching.
  std::vector<double> blur_sigmas = {1.0, 2.0};
  /// Perspective frames measure reprojection as distance to the pixel ray.
  bool ray_reprojection = true;

  void validate() const;
};

struct LossWeights {
  double w_pr = 1.0;
  double w_alpha = 1.0;
  double w_R = 1.0;
  double w_repro = 1.0;
  double w_min_k = 0.1;
  double w_emb_align = 1.0;
  double w_mask = 1.0;
  double w_tex_photo = 1.0;
  double w_tex_percep = 0.1;
  /// Multiplier of the dense-basis term inside the prior loss; the Table-1
  /// style "no basis prior" ablation sets it to zero.
  double w_pr_basis = 1.0;

  /// Defaults with w_repro = 1 (perspective) or 0.01 (orthographic, pixels).
  static LossWeights for_camera(geom::CameraKind kind);
  void validate() const;
};

/// Sparse NR-SFM supervision for one frame.
struct NrsfmLabels {
  Eigen::MatrixXd basis_star;  // (3 D) x K, column k is B*_k flattened column-major
  std::vector<int> visible;    // indices into the K keypoints
  Eigen::VectorXd alpha_star;
  Eigen::Matrix3d rotation_star = Eigen::Matrix3d::Identity();
};

/// eps (sqrt(1 + (|z| / eps)^2) - 1), written without cancellation.
template <typename Derived>
typename Derived::Scalar pseudo_huber(const Eigen::MatrixBase<Derived>& z, double eps) {
  using std::sqrt;
  using Scalar = typename Derived::Scalar;
  const Scalar s = z.squaredNorm();
  return s / (eps * (sqrt(1.0 + s / (eps * eps)) + 1.0));
}

/// X = B alpha for a basis flattened column-major into a 3D vector.
template <typename Scalar, typename Derived>
Vec3<Scalar> apply_basis(const Eigen::MatrixBase<Derived>& basis_flat, const VectorX<Scalar>& alpha) {
  Vec3<Scalar> x = Vec3<Scalar>::Zero();
  for (Eigen::Index j = 0; j < alpha.size(); ++j) {
    for (int i = 0; i < 3; ++i) x(i) += basis_flat(3 * j + i) * alpha(j);
  }
  return x;
}

/// Object-frame points B(kappa_p) alpha for every column of a (3 D) x N basis.
template <typename Scalar>
Matrix3X<Scalar> reconstruct_points(const MatrixX<Scalar>& basis, const VectorX<Scalar>& alpha) {
  if (basis.rows() != 3 * alpha.size()) throw Error(ErrorCode::DimMismatch, "basis rows must equal 3 * dim(alpha)");
  Matrix3X<Scalar> pts(3, basis.cols());
  for (Eigen::Index p = 0; p < basis.cols(); ++p) pts.col(p) = apply_basis<Scalar>(basis.col(p), alpha);
  return pts;
}

/// (1/|V|) sum_k |B(kappa_k) - B*_k|_eps + w_alpha |alpha - alpha*|_eps + w_R d(R, R*).
template <typename Scalar>
Scalar prior_loss(const MatrixX<Scalar>& keypoint_basis, const VectorX<Scalar>& alpha, const Mat3<Scalar>& rotation,
                  const NrsfmLabels& labels, const LossConfig& cfg, const LossWeights& w) {
  if (labels.visible.empty()) throw Error(ErrorCode::EmptyVisibleSet, "prior_loss: no visible keypoints");
  if (keypoint_basis.rows() != labels.basis_star.rows() || alpha.size() != labels.alpha_star.size()) {
    throw Error(ErrorCode::DimMismatch, "prior_loss: prediction and label dimensions differ");
  }
  const double eps = cfg.epsilon_geometry;
  Scalar basis_term(0.0);
  for (int k : labels.visible) {
    basis_term += pseudo_huber((keypoint_basis.col(k) - labels.basis_star.col(k).template cast<Scalar>()).eval(), eps);
  }
  basis_term = basis_term / static_cast<double>(labels.visible.size());
  const Scalar alpha_term = pseudo_huber((alpha - labels.alpha_star.template cast<Scalar>()).eval(), eps);
  const Mat3<Scalar> r_star = labels.rotation_star.template cast<Scalar>();
  const Scalar rot_term = geom::rotation_distance<Scalar>(rotation, r_star);
  return w.w_pr_basis * basis_term + w.w_alpha * alpha_term + w.w_R * rot_term;
}

/// Condition number above which the translation system counts as singular.
inline constexpr double kMaxTranslationCondition = 1e12;

/// Inverse of sum_k (I - r_k r_k^T); throws SingularSystem when the rays are
/// (near-)parallel.
[[nodiscard]] Eigen::Matrix3d translation_system_inverse(const Eigen::Matrix3Xd& rays);

/// argmin_t sum_k |X_k + t - (r_k^T (X_k + t)) r_k|^2 in closed form:
/// t* = [sum (I - G_k)]^-1 [sum (G_k - I) X_k], G_k = r_k r_k^T.
template <typename Scalar>
Vec3<Scalar> closed_form_translation(const Matrix3X<Scalar>& points, const Eigen::Matrix3Xd& rays) {
  if (points.cols() != rays.cols()) throw Error(ErrorCode::DimMismatch, "closed_form_translation: size mismatch");
  if (points.cols() < 2) throw Error(ErrorCode::SingularSystem, "closed_form_translation: need at least 2 points");
  const Eigen::Matrix3d a_inv = translation_system_inverse(rays);
  Vec3<Scalar> b = Vec3<Scalar>::Zero();
  for (Eigen::Index k = 0; k < points.cols(); ++k) {
    const Eigen::Vector3d r = rays.col(k);
    const Scalar proj = r(0) * points(0, k) + r(1) * points(1, k) + r(2) * points(2, k);
    for (int i = 0; i < 3; ++i) b(i) += r(i) * proj - points(i, k);
  }
  Vec3<Scalar> t;
  for (int i = 0; i < 3; ++i) t(i) = a_inv(i, 0) * b(0) + a_inv(i, 1) * b(1) + a_inv(i, 2) * b(2);
  return t;
}

/// sum_y |X - (r^T X) r|_eps for camera-frame points and unit rays.
template <typename Scalar>
Scalar ray_projection_loss(const Matrix3X<Scalar>& camera_points, const Eigen::Matrix3Xd& rays, double eps) {
  if (camera_points.cols() != rays.cols()) throw Error(ErrorCode::DimMismatch, "ray_projection_loss: size mismatch");
  Scalar total(0.0);
  for (Eigen::Index k = 0; k < rays.cols(); ++k) {
    const Eigen::Vector3d r = rays.col(k);
    const Vec3<Scalar> x = camera_points.col(k);
    const Scalar proj = r(0) * x(0) + r(1) * x(1) + r(2) * x(2);
    Vec3<Scalar> res;
    for (int i = 0; i < 3; ++i) res(i) = x(i) - proj * r(i);
    total += pseudo_huber(res, eps);
  }
  return total;
}

/// sum_y |pi(X) - y|_eps under the perspective camera, with its 1/x3 factor.
template <typename Scalar>
Scalar perspective_pixel_loss(const Matrix3X<Scalar>& camera_points, const Eigen::Matrix2Xd& y,
                              const geom::CameraIntrinsics& cam, double eps) {
  Scalar total(0.0);
  for (Eigen::Index k = 0; k < y.cols(); ++k) {
    const Vec3<Scalar> x = camera_points.col(k);
    const Vec2<Scalar> res = geom::project<Scalar>(cam, x) - y.col(k).template cast<Scalar>();
    total += pseudo_huber(res, eps);
  }
  return total;
}

template <typename Scalar>
struct ReprojectionResult {
  Scalar value;
  Vec3<Scalar> translation;
};

/// Reprojection self-consistency of object-frame points observed at image
/// points y. Orthographic cameras use t = 0 and pixel residuals. Perspective
/// cameras take t from the closed-form ray solve and measure ray distances
/// (or pixel residuals when cfg.ray_reprojection is false).
template <typename Scalar>
ReprojectionResult<Scalar> reprojection_loss(const Matrix3X<Scalar>& object_points, const Mat3<Scalar>& rotation,
                                             const geom::CameraIntrinsics& cam, const Eigen::Matrix2Xd& y,
                                             const LossConfig& cfg) {
  if (y.cols() == 0) throw Error(ErrorCode::EmptyVisibleSet, "reprojection_loss: empty mask");
  if (object_points.cols() != y.cols()) throw Error(ErrorCode::DimMismatch, "reprojection_loss: size mismatch");
  const double eps = cfg.epsilon_geometry;
  const Matrix3X<Scalar> rotated = rotation * object_points;
  ReprojectionResult<Scalar> out{Scalar(0.0), Vec3<Scalar>::Zero()};
  if (!cam.is_perspective()) {
    for (Eigen::Index k = 0; k < y.cols(); ++k) {
      Vec2<Scalar> res;
      res(0) = rotated(0, k) - y(0, k);
      res(1) = rotated(1, k) - y(1, k);
      out.value += pseudo_huber(res, eps);
    }
    return out;
  }
  Eigen::Matrix3Xd rays(3, y.cols());
  for (Eigen::Index k = 0; k < y.cols(); ++k) rays.col(k) = geom::ray_direction(cam, y.col(k));
  out.translation = closed_form_translation<Scalar>(rotated, rays);
  const Matrix3X<Scalar> camera_points = rotated.colwise() + out.translation;
  out.value = cfg.ray_reprojection ? ray_projection_loss<Scalar>(camera_points, rays, eps)
                                   : perspective_pixel_loss<Scalar>(camera_points, y, cam, eps);
  return out;
}

/// Image point of the landmark with basis B(kappa) (flattened) under the
/// shape and pose of another frame: pi(R' B alpha' + t').
template <typename Scalar, typename Derived>
Vec2<Scalar> cross_project(const Eigen::MatrixBase<Derived>& basis_flat, const VectorX<Scalar>& alpha,
                           const Mat3<Scalar>& rotation, const Vec3<Scalar>& translation,
                           const geom::CameraIntrinsics& cam) {
  const Vec3<Scalar> x = rotation * apply_basis<Scalar>(basis_flat, alpha) + translation;
  return geom::project<Scalar>(cam, x);
}

template <typename Scalar>
struct PhotometricResult {
  Scalar value;
  int clamped = 0;
};

/// sum_y |I'(y_hat') - I(y)|_eps with bilinear sampling of I'. `colors`
/// holds I(y) per column; `pixel_coords` are continuous pixel coordinates
/// of the correspondences in I'.
template <typename Scalar>
PhotometricResult<Scalar> photometric_loss(const Eigen::MatrixXd& colors, const Image& other,
                                           const Eigen::Matrix<Scalar, 2, Eigen::Dynamic>& pixel_coords,
                                           double eps) {
  PhotometricResult<Scalar> out{Scalar(0.0), 0};
  for (Eigen::Index p = 0; p < colors.cols(); ++p) {
    const BilinearSample<Scalar> s = sample_bilinear<Scalar>(other, pixel_coords(0, p), pixel_coords(1, p));
    if (s.clamped) ++out.clamped;
    out.value += pseudo_huber((s.value - colors.col(p).template cast<Scalar>()).eval(), eps);
  }
  return out;
}

/// (1/k) sum_y (sum of the k smallest entries of row y). Rows are pixels,
/// columns are reference frames.
template <typename Scalar>
Scalar min_k_loss(const MatrixX<Scalar>& per_reference, int k) {
  const Eigen::Index refs = per_reference.cols();
  if (k < 1 || k > refs) {
    throw Error(ErrorCode::KTooLarge, "min_k_loss: k = " + std::to_string(k) + " with " + std::to_string(refs) +
                                          " references");
  }
  Scalar total(0.0);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(refs));
  for (Eigen::Index y = 0; y < per_reference.rows(); ++y) {
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](Eigen::Index a, Eigen::Index b) {
      const double va = nn::value_of(per_reference(y, a));
      const double vb = nn::value_of(per_reference(y, b));
      return va < vb || (va == vb && a < b);
    });
    for (int i = 0; i < k; ++i) total += per_reference(y, order[static_cast<std::size_t>(i)]);
  }
  return total / static_cast<double>(k);
}

/// [0 0 1] R mean(kappa) / |mean(kappa)|, in [-1, 1].
template <typename Scalar>
Scalar embedding_alignment_loss(const Matrix3X<Scalar>& kappa, const Mat3<Scalar>& rotation) {
  using std::sqrt;
  if (kappa.cols() == 0) throw Error(ErrorCode::EmptyVisibleSet, "embedding_alignment_loss: empty mask");
  const Vec3<Scalar> mean = kappa.rowwise().sum() / static_cast<double>(kappa.cols());
  Scalar n = sqrt(mean.squaredNorm());
  if (nn::value_of(n) < 1e-8) n = Scalar(1e-8);
  const Scalar z = rotation(2, 0) * mean(0) + rotation(2, 1) * mean(1) + rotation(2, 2) * mean(2);
  return z / n;
}

/// Distance field of a silhouette: distance (pixels) to the nearest mask
/// pixel center, plus the image-to-pixel offset of the frame.
struct MaskField {
  const Image* distance = nullptr;
  Eigen::Vector2d origin = Eigen::Vector2d::Zero();
};

/// Distance to the silhouette at continuous pixel coordinates. Outside the
/// image the distance to the border is added.
template <typename Scalar>
Scalar silhouette_distance(const Image& distance, const Scalar& u, const Scalar& v) {
  using std::sqrt;
  const BilinearSample<Scalar> s = sample_bilinear<Scalar>(distance, u, v);
  Scalar d = s.value(0);
  if (s.clamped) {
    const double uc = std::clamp(nn::value_of(u), 0.0, distance.width - 1.0);
    const double vc = std::clamp(nn::value_of(v), 0.0, distance.height - 1.0);
    const Scalar du = u - uc;
    const Scalar dv = v - vc;
    const Scalar extra2 = du * du + dv * dv;
    if (nn::value_of(extra2) > 0.0) d += sqrt(extra2);
  }
  return d;
}

template <typename Scalar>
struct MaskResult {
  Scalar soft;
  double hard = 0.0;
};

/// Fraction of sampled landmarks B(kappa_s) alpha that project outside the
/// silhouette (hard), and its relaxation mean(max(0, d - tol)^2 / L^2) over
/// the silhouette distance d in pixels, L = max(W, H) (soft). A sample behind
/// the camera costs 1 in both.
template <typename Scalar>
MaskResult<Scalar> mask_reprojection_loss(const MatrixX<Scalar>& sample_basis, const VectorX<Scalar>& alpha,
                                          const Mat3<Scalar>& rotation, const Vec3<Scalar>& translation,
                                          const geom::CameraIntrinsics& cam, const MaskField& field,
                                          double tolerance) {
  const Eigen::Index n = sample_basis.cols();
  if (n < 1) throw Error(ErrorCode::InvalidSpec, "mask_reprojection_loss: no samples");
  const Image& dist = *field.distance;
  const double extent2 = std::pow(static_cast<double>(std::max(dist.width, dist.height)), 2);
  MaskResult<Scalar> out{Scalar(0.0), 0.0};
  int outside = 0;
  for (Eigen::Index s = 0; s < n; ++s) {
    const Vec3<Scalar> x = rotation * apply_basis<Scalar>(sample_basis.col(s), alpha) + translation;
    if (cam.is_perspective() && !(nn::value_of(x(2)) > 1e-6)) {
      ++outside;
      out.soft += 1.0;
      continue;
    }
    const Vec2<Scalar> y = geom::project<Scalar>(cam, x);
    const Scalar u = y(0) + field.origin(0);
    const Scalar v = y(1) + field.origin(1);
    const Scalar d = silhouette_distance<Scalar>(dist, u, v);
    if (nn::value_of(d) > tolerance) {
      ++outside;
      const Scalar e = d - tolerance;
      out.soft += e * e / extent2;
    }
  }
  out.soft = out.soft / static_cast<double>(n);
  out.hard = static_cast<double>(outside) / static_cast<double>(n);
  return out;
}

/// Square window of a frame on which the texture model is evaluated densely.
/// Predictions are ordered row-major within the window.
struct TextureCrop {
  int row0 = 0;
  int col0 = 0;
  int size = 8;  // multiple of 4
};

template <typename Scalar>
struct TextureLossResult {
  Scalar photometric;
  Scalar multiscale;
  int n_inside = 0;
};

/// Photometric error between the reproduced colors and the original image
/// inside the silhouette, plus the same error between 2x2 and 4x4
/// block averages (the multi-scale term).
template <typename Scalar>
TextureLossResult<Scalar> texture_loss(const Matrix3X<Scalar>& predicted, const TextureCrop& crop,
                                       const Image& original, const Mask& mask, double eps) {
  const int sz = crop.size;
  if (predicted.cols() != static_cast<Eigen::Index>(sz) * sz) {
    throw Error(ErrorCode::DimMismatch, "texture_loss: prediction does not cover the crop");
  }
  TextureLossResult<Scalar> out{Scalar(0.0), Scalar(0.0), 0};
  auto inside = [&](int r, int c) {
    const int rr = crop.row0 + r;
    const int cc = crop.col0 + c;
    return rr >= 0 && cc >= 0 && rr < mask.height && cc < mask.width && mask.at(rr, cc);
  };
  for (int r = 0; r < sz; ++r) {
    for (int c = 0; c < sz; ++c) {
      if (!inside(r, c)) continue;
      ++out.n_inside;
      const Vec3<Scalar> res = predicted.col(r * sz + c) - original.pixel(crop.row0 + r, crop.col0 + c)
                                                                .template head<3>()
                                                                .template cast<Scalar>();
      out.photometric += pseudo_huber(res, eps);
    }
  }
  for (int block : {2, 4}) {
    for (int br = 0; br < sz; br += block) {
      for (int bc = 0; bc < sz; bc += block) {
        Vec3<Scalar> pred_sum = Vec3<Scalar>::Zero();
        Eigen::Vector3d orig_sum = Eigen::Vector3d::Zero();
        int n = 0;
        for (int r = br; r < br + block; ++r) {
          for (int c = bc; c < bc + block; ++c) {
            if (!inside(r, c)) continue;
            pred_sum += predicted.col(r * sz + c);
            orig_sum += original.pixel(crop.row0 + r, crop.col0 + c).head<3>();
            ++n;
          }
        }
        if (n == 0) continue;
        const Vec3<Scalar> res = (pred_sum - orig_sum.cast<Scalar>()) / static_cast<double>(n);
        out.multiscale += pseudo_huber(res, eps);
      }
    }
  }
  return out;
}

/// Observed data for one frame of a batch.
struct FrameObservation {
  int frame_id = 0;
  geom::CameraIntrinsics camera;
  /// Pixel coordinates (u, v) = image coordinates + origin.
  Eigen::Vector2d origin = Eigen::Vector2d::Zero();
  /// Sampled silhouette pixels as (col, row).
  Eigen::Matrix2Xi pixels;
  /// Raw image followed by its blurred copies (cfg.blur_sigmas).
  const std::vector<Image>* pyramid = nullptr;
  const Mask* mask = nullptr;
  const Image* mask_distance = nullptr;
  const NrsfmLabels* labels = nullptr;
  TextureCrop crop;

  /// Image coordinates of the sampled pixels.
  [[nodiscard]] Eigen::Matrix2Xd image_points() const {
    return pixels.cast<double>().colwise() - origin;
  }
};

/// Differentiable model outputs for one frame of a batch.
template <typename Scalar>
struct FrameOutputs {
  Matrix3X<Scalar> pixel_kappa;      // 3 x N
  MatrixX<Scalar> pixel_basis;       // 3D x N
  MatrixX<Scalar> keypoint_basis;    // 3D x K
  VectorX<Scalar> alpha;
  Mat3<Scalar> rotation = Mat3<Scalar>::Identity();
  Matrix3X<Scalar> texture;          // 3 x crop.size^2
};

/// Term values of one objective evaluation. Per-frame terms are averaged over
/// the batch and normalized by their pixel counts. min_k_raw keeps the
/// per-pixel sum without the 1/|Omega| factor and mask_hard the indicator
/// fraction reported next to the relaxed term.
struct LossBreakdown {
  double total = 0.0;
  double prior = 0.0;
  double repro = 0.0;
  double min_k = 0.0;
  double min_k_raw = 0.0;
  double emb_align = 0.0;
  double mask = 0.0;
  double mask_hard = 0.0;
  double texture = 0.0;
  int clamped_samples = 0;
  int excluded_references = 0;

  [[nodiscard]] static std::vector<std::string> columns();
  [[nodiscard]] std::vector<double> values() const;
};

template <typename Scalar>
struct TotalLoss {
  Scalar total;
  LossBreakdown breakdown;
  std::vector<Vec3<Scalar>> translations;
};

/// Per-pixel, per-reference appearance discrepancy used by the min-k term:
/// the photometric error summed over the raw and blurred image levels.
template <typename Scalar>
struct CrossViewTerms {
  MatrixX<Scalar> per_reference;  // pixels x references
  std::vector<int> kept;          // reference batch positions kept
  int clamped = 0;
  int excluded = 0;
};

template <typename Scalar>
CrossViewTerms<Scalar> cross_view_terms(std::span<const FrameObservation> obs,
                                        std::span<const FrameOutputs<Scalar>> out,
                                        std::span<const Vec3<Scalar>> translations, const LossConfig& cfg) {
  CrossViewTerms<Scalar> cv;
  const FrameObservation& target = obs[0];
  const FrameOutputs<Scalar>& tout = out[0];
  const Eigen::Index n = target.pixels.cols();
  const std::vector<Image>& tpyr = *target.pyramid;
  const std::size_t levels = tpyr.size();
  const double eps = cfg.epsilon_color;
  const double invalid = static_cast<double>(levels) * std::sqrt(3.0);  // beyond any reachable error

  std::vector<VectorX<Scalar>> columns;
  for (std::size_t r = 1; r < obs.size(); ++r) {
    const FrameObservation& ref = obs[r];
    const std::vector<Image>& rpyr = *ref.pyramid;
    VectorX<Scalar> col(n);
    int clamped = 0;
    for (Eigen::Index p = 0; p < n; ++p) {
      const int pc = target.pixels(0, p);
      const int pr = target.pixels(1, p);
      const Vec3<Scalar> x =
          out[r].rotation * apply_basis<Scalar>(tout.pixel_basis.col(p), out[r].alpha) + translations[r];
      if (ref.camera.is_perspective() && !(nn::value_of(x(2)) > geom::kMinDepth)) {
        ++clamped;
        col(p) = Scalar(invalid);
        continue;
      }
      const Vec2<Scalar> y = geom::project<Scalar>(ref.camera, x);
      const Scalar u = y(0) + ref.origin(0);
      const Scalar v = y(1) + ref.origin(1);
      Scalar acc(0.0);
      bool was_clamped = false;
      for (std::size_t l = 0; l < levels; ++l) {
        const BilinearSample<Scalar> s = sample_bilinear<Scalar>(rpyr[l], u, v);
        was_clamped = was_clamped || s.clamped;
        acc += pseudo_huber((s.value - tpyr[l].pixel(pr, pc).template cast<Scalar>()).eval(), eps);
      }
      if (was_clamped) ++clamped;
      col(p) = acc;
    }
    cv.clamped += clamped;
    if (static_cast<double>(clamped) > cfg.max_clamped_fraction * static_cast<double>(n)) {
      ++cv.excluded;
      continue;
    }
    cv.kept.push_back(static_cast<int>(r));
    columns.push_back(std::move(col));
  }
  cv.per_reference.resize(n, static_cast<Eigen::Index>(columns.size()));
  for (std::size_t c = 0; c < columns.size(); ++c) cv.per_reference.col(static_cast<Eigen::Index>(c)) = columns[c];
  return cv;
}

/// Weighted sum of all terms for one batch. Frame 0 is the min-k target and
/// the remaining frames are its references. `mask_basis` holds B(kappa_s) for
/// the shared sphere samples of the mask term.
template <typename Scalar>
TotalLoss<Scalar> total_loss(std::span<const FrameObservation> obs, std::span<const FrameOutputs<Scalar>> out,
                             const MatrixX<Scalar>& mask_basis, const LossConfig& cfg, const LossWeights& w) {
  if (obs.empty() || obs.size() != out.size()) throw Error(ErrorCode::DimMismatch, "total_loss: empty batch");
  const double nf = static_cast<double>(obs.size());
  TotalLoss<Scalar> res{Scalar(0.0), {}, {}};
  Scalar prior(0.0), repro(0.0), align(0.0), mask(0.0), texture(0.0);
  double mask_hard = 0.0;

  for (std::size_t f = 0; f < obs.size(); ++f) {
    const FrameObservation& o = obs[f];
    const FrameOutputs<Scalar>& m = out[f];
    const double npx = static_cast<double>(o.pixels.cols());
    prior += prior_loss<Scalar>(m.keypoint_basis, m.alpha, m.rotation, *o.labels, cfg, w);

    const Matrix3X<Scalar> pts = reconstruct_points<Scalar>(m.pixel_basis, m.alpha);
    ReprojectionResult<Scalar> rp = reprojection_loss<Scalar>(pts, m.rotation, o.camera, o.image_points(), cfg);
    repro += rp.value / npx;
    res.translations.push_back(rp.translation);

    align += embedding_alignment_loss<Scalar>(m.pixel_kappa, m.rotation);

    if (mask_basis.cols() > 0) {
      const MaskResult<Scalar> mr = mask_reprojection_loss<Scalar>(
          mask_basis, m.alpha, m.rotation, rp.translation, o.camera, MaskField{o.mask_distance, o.origin},
          cfg.mask_tolerance_px);
      mask += mr.soft;
      mask_hard += mr.hard;
    }

    if (m.texture.cols() > 0) {
      const TextureLossResult<Scalar> tl =
          texture_loss<Scalar>(m.texture, o.crop, (*o.pyramid)[0], *o.mask, cfg.epsilon_color);
      if (tl.n_inside > 0) {
        texture += (w.w_tex_photo * tl.photometric + w.w_tex_percep * tl.multiscale) / static_cast<double>(tl.n_inside);
      }
    }
  }
  prior = prior / nf;
  repro = repro / nf;
  align = align / nf;
  mask = mask / nf;
  texture = texture / nf;

  Scalar min_k(0.0);
  double min_k_raw = 0.0;
  if (obs.size() > 1) {
    const CrossViewTerms<Scalar> cv = cross_view_terms<Scalar>(obs, out, res.translations, cfg);
    res.breakdown.clamped_samples = cv.clamped;
    res.breakdown.excluded_references = cv.excluded;
    if (!cv.kept.empty()) {
      const int k = std::min<int>(cfg.k, static_cast<int>(cv.kept.size()));
      const Scalar raw = min_k_loss<Scalar>(cv.per_reference, k);
      min_k_raw = nn::value_of(raw);
      min_k = raw / static_cast<double>(obs[0].pixels.cols());
    }
  }

  res.total = w.w_pr * prior + w.w_repro * repro + w.w_min_k * min_k + w.w_emb_align * align + w.w_mask * mask +
              texture;
  LossBreakdown& b = res.breakdown;
  b.total = nn::value_of(res.total);
  b.prior = nn::value_of(prior);
  b.repro = nn::value_of(repro);
  b.min_k = nn::value_of(min_k);
  b.min_k_raw = min_k_raw;
  b.emb_align = nn::value_of(align);
  b.mask = nn::value_of(mask);
  b.mask_hard = mask_hard / nf;
  b.texture = nn::value_of(texture);
  return res;
}

}  // namespace c3dm::losses
