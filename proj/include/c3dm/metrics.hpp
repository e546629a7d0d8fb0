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

// Evaluation protocol: variance-normalized, similarity-ICP-aligned symmetric
// Chamfer distance between point clouds and normalized depth error.

#include "c3dm/geom.hpp"
#include "c3dm/image.hpp"

#include <Eigen/Core>

#include <string>
#include <vector>

namespace c3dm::metrics {

struct PointCloud {
  Eigen::Matrix3Xd points;

  [[nodiscard]] Eigen::Index size() const noexcept { return points.cols(); }
};

/// Camera-frame depth on an H x W grid with its validity mask.
struct DepthMap {
  int height = 0;
  int width = 0;
  Eigen::VectorXd values;  // row-major, height * width
  Mask valid;

  DepthMap() = default;
  DepthMap(int h, int w) : height(h), width(w), values(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(h) * w)), valid(h, w) {}
  [[nodiscard]] double at(int r, int c) const { return values(static_cast<Eigen::Index>(r) * width + c); }
  double& at(int r, int c) { return values(static_cast<Eigen::Index>(r) * width + c); }
};

/// Static k-d tree over the columns of a 3 x N matrix.
class KdTree {
 public:
  explicit KdTree(const Eigen::Matrix3Xd& points);

  struct Hit {
    Eigen::Index index = -1;
    double squared_distance = 0.0;
  };
  [[nodiscard]] Hit nearest(const Eigen::Vector3d& q) const;

 private:
  struct Node {
    int axis = -1;  // -1 for leaves
    double split = 0.0;
    int left = -1, right = -1;
    int begin = 0, end = 0;
  };
  int build(int begin, int end);
  void search(int node, const Eigen::Vector3d& q, Hit& best) const;

  Eigen::Matrix3Xd points_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
};

/// Clouds above this size are queried through a k-d tree.
inline constexpr Eigen::Index kBruteForceLimit = 2000;

/// Nearest neighbor in `to` of every column of `from`.
[[nodiscard]] std::vector<KdTree::Hit> nearest_neighbors(const Eigen::Matrix3Xd& from, const Eigen::Matrix3Xd& to);

/// E|x - mean|^2.
[[nodiscard]] double total_variance(const Eigen::Matrix3Xd& pts);

/// Rescales pred about its centroid so its total variance (or per-axis
/// variances) matches gt, then moves the centroid onto gt's.
[[nodiscard]] PointCloud variance_normalize(const PointCloud& pred, const PointCloud& gt, bool per_axis = false);

struct IcpOptions {
  int max_iter = 100;
  double tol = 1e-9;  // relative residual change
  /// Restarts are ranked on at most this many points before the winner is
  /// refined on the full clouds; 0 runs every restart on the full clouds.
  Eigen::Index restart_points = 500;
};

struct AlignResult {
  geom::SimilarityTransform transform;
  PointCloud aligned;
  int iterations = 0;
  double residual = 0.0;  // mean squared NN distance over both matching directions
  std::vector<double> residual_history;
};

/// The 24 rotations of the octahedral group (signed permutations, det +1).
[[nodiscard]] const std::vector<Eigen::Matrix3d>& octahedral_rotations();

/// Similarity ICP from each octahedral rotation; returns the best run.
[[nodiscard]] AlignResult icp_align(const PointCloud& pred, const PointCloud& gt, const IcpOptions& opt = {});

/// One ICP run from a given initial transform.
[[nodiscard]] AlignResult icp_from(const PointCloud& pred, const PointCloud& gt,
                                   const geom::SimilarityTransform& init, const IcpOptions& opt);

/// (1/2) (mean NN distance pred -> gt + mean NN distance gt -> pred).
[[nodiscard]] double chamfer_symmetric(const PointCloud& pred_aligned, const PointCloud& gt);

/// Variance normalization, ICP alignment, then symmetric Chamfer distance.
[[nodiscard]] double d_pcl(const PointCloud& pred, const PointCloud& gt, const IcpOptions& opt = {});

/// Mean absolute depth difference on the mask after matching the predicted
/// depth's mean and standard deviation to ground truth's.
[[nodiscard]] double depth_error(const DepthMap& pred, const DepthMap& gt, const Mask& omega);

/// ASCII PLY with x y z per vertex.
void write_ply(const std::string& path, const PointCloud& cloud);
[[nodiscard]] PointCloud read_ply(const std::string& path);

/// Text header (size and run-length encoded mask) followed by raw
/// little-endian float64 values.
void write_depth(const std::string& path, const DepthMap& depth);
[[nodiscard]] DepthMap read_depth(const std::string& path);

}  // namespace c3dm::metrics
