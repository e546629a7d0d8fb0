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

// Procedural deformable categories: ground-truth shape and texture fields,
// rendered frames, noisy sparse NR-SFM labels and the viewpoint-rebalanced
// batch sampler.

#include "c3dm/geom.hpp"
#include "c3dm/image.hpp"
#include "c3dm/losses.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace c3dm::synth {

struct CategorySpec {
  std::uint64_t seed = 0;
  int D = 3;                 // basis rank
  int K_kp = 15;             // keypoints
  int n_instances = 20;
  int views_per_instance = 10;
  int height = 64;
  int width = 64;
  geom::CameraKind camera = geom::CameraKind::Perspective;
  int descriptor_dim = 16;   // F
  int texture_dim = 3;       // ground-truth texture code length
  double sigma_d = 0.0;      // descriptor noise
  double sigma_l = 0.0;      // label noise
  int sh_degree = 3;         // smoothness of the basis and texture fields
  /// Mass ratio of the two azimuth modes.
  double azimuth_skew = 4.0;
  double max_elevation_deg = 30.0;

  /// Throws InvalidSpec naming the offending field.
  void validate() const;
  /// Length of the per-frame instance descriptor.
  [[nodiscard]] int instance_dim() const noexcept { return D + texture_dim + 6; }
  friend bool operator==(const CategorySpec&, const CategorySpec&) = default;
};

/// JSON object text; missing fields keep their defaults and unknown fields
/// are rejected with InvalidSpec.
[[nodiscard]] std::string to_json(const CategorySpec& spec);
[[nodiscard]] CategorySpec spec_from_json(const std::string& text);

struct Instance {
  Eigen::VectorXd alpha;
  Eigen::VectorXd beta;
};

/// Analytic category: B(kappa) = reshape(basis_coeffs * sh(kappa)) scaled by
/// shape_scale, colors sigmoid((T_0 + sum_j beta_j T_j) sh(kappa)).
struct GroundTruthCategory {
  int D = 0;
  int sh_degree = 3;
  double shape_scale = 1.0;
  Eigen::MatrixXd basis_coeffs;    // (3 D) x sh_count
  Eigen::MatrixXd texture_coeffs;  // 3 (1 + D') x sh_count
  Eigen::Matrix3Xd anchors;        // keypoint embeddings
  Eigen::MatrixXd scramble_q;      // F x F orthogonal
  Eigen::MatrixXd scramble_w;      // (F - 3) x 3
  Eigen::VectorXd scramble_b;
  Eigen::MatrixXd instance_mix;    // G x G orthogonal
  std::vector<Instance> instances;

  /// 3 x D.
  [[nodiscard]] Eigen::MatrixXd basis_at(const Eigen::Vector3d& kappa) const;
  /// (3 D) flattened column-major, as in NrsfmLabels::basis_star.
  [[nodiscard]] Eigen::VectorXd basis_flat(const Eigen::Vector3d& kappa) const;
  [[nodiscard]] Eigen::Vector3d point(const Eigen::Vector3d& kappa, const Eigen::VectorXd& alpha) const;
  /// d point / d kappa, 3 x 3 (ambient derivative).
  [[nodiscard]] Eigen::Matrix3d point_jacobian(const Eigen::Vector3d& kappa, const Eigen::VectorXd& alpha) const;
  [[nodiscard]] Eigen::Vector3d color(const Eigen::Vector3d& kappa, const Eigen::VectorXd& beta) const;
  /// Noise-free pixel descriptor Q [kappa; tanh(W kappa + b)].
  [[nodiscard]] Eigen::VectorXd descriptor(const Eigen::Vector3d& kappa) const;
  /// Noise-free M [alpha; beta; R e1; R e2].
  [[nodiscard]] Eigen::VectorXd instance_descriptor(const Instance& inst, const Eigen::Matrix3d& rotation) const;
};

struct Frame {
  int frame_id = 0;
  int instance = 0;
  int height = 0;
  int width = 0;
  geom::CameraIntrinsics camera;
  /// Pixel coordinates = image coordinates + origin.
  Eigen::Vector2d origin = Eigen::Vector2d::Zero();
  geom::RigidPose pose;
  Eigen::VectorXd alpha;
  Eigen::VectorXd beta;

  Image color;                 // 3 channels, background 0
  Mask mask;
  Eigen::VectorXd depth;       // camera-frame z, row-major, 0 off the mask
  Eigen::Matrix3Xd kappa;      // per pixel, row-major, 0 off the mask
  Eigen::MatrixXd descriptors; // F x (H W), 0 off the mask
  Eigen::VectorXd instance_descriptor;

  Eigen::Matrix2Xd keypoints;  // pixel coordinates (u, v)
  std::vector<std::uint8_t> keypoint_visible;
  Eigen::MatrixXd keypoint_descriptors;  // F x K

  [[nodiscard]] Eigen::Index pixel_index(int r, int c) const noexcept {
    return static_cast<Eigen::Index>(r) * width + c;
  }
};

struct Dataset {
  CategorySpec spec;
  GroundTruthCategory gt;
  std::vector<Frame> frames;
  std::vector<losses::NrsfmLabels> labels;
};

[[nodiscard]] GroundTruthCategory make_ground_truth(const CategorySpec& spec);

/// Camera of the category's frames.
[[nodiscard]] geom::CameraIntrinsics make_camera(const CategorySpec& spec);
[[nodiscard]] Eigen::Vector2d make_origin(const CategorySpec& spec);

/// Renders one view of an instance. Descriptor noise is drawn from `rng`.
[[nodiscard]] Frame render_frame(const CategorySpec& spec, const GroundTruthCategory& gt, int instance,
                                 const geom::RigidPose& pose, std::mt19937_64& rng);

/// Labels of a frame: ground truth plus isotropic noise of level sigma_l.
[[nodiscard]] losses::NrsfmLabels make_labels(const GroundTruthCategory& gt, const Frame& frame, double sigma_l,
                                              std::mt19937_64& rng);

/// Views with fewer than 3 visible keypoints, fewer than 20 silhouette pixels
/// or a silhouette reaching the two-pixel image border are redrawn.
[[nodiscard]] Dataset generate_category(const CategorySpec& spec);

// Viewpoint rebalancing and batching.

/// Principal direction of the (sign-folded) rotation axes. The sign makes
/// the largest-magnitude component positive.
[[nodiscard]] Eigen::Vector3d upward_axis(const std::vector<Eigen::Matrix3d>& rotations);

struct Azimuth {
  double angle = 0.0;  // [0, 2 pi)
  bool degenerate = false;
};
/// Twist angle of R about `up` in the decomposition R = swing * twist.
[[nodiscard]] Azimuth azimuth(const Eigen::Matrix3d& rotation, const Eigen::Vector3d& up);

inline constexpr int kAzimuthBins = 16;
/// Inverse bin frequency of each azimuth.
[[nodiscard]] std::vector<double> rebalance_weights(const std::vector<double>& azimuths, int bins = kAzimuthBins);

/// Weighted batches without repeats inside a batch. Frame 0 of each batch is
/// the min-k target.
class BatchSampler {
 public:
  BatchSampler(std::vector<int> instance_of_frame, std::vector<double> weights, int batch_size,
               bool distinct_instances);
  [[nodiscard]] std::vector<int> next(std::mt19937_64& rng) const;
  [[nodiscard]] int batch_size() const noexcept { return batch_size_; }

 private:
  std::vector<int> instance_;
  std::vector<double> weights_;
  int batch_size_;
  bool distinct_;
};

// Dataset directory: category.json, labels.json, keypoints.csv and one
// binary blob per frame under frames/.

void save_dataset(const std::string& dir, const Dataset& ds);
[[nodiscard]] Dataset load_dataset(const std::string& dir);

}  // namespace c3dm::synth
