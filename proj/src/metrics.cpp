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
#include "c3dm/metrics.hpp"

#include "c3dm/error.hpp"
#include "c3dm/mlp.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

namespace c3dm::metrics {

namespace {

constexpr int kLeafSize = 8;

/// Nearest-neighbor queries against a fixed cloud; brute force when small.
class Searcher {
 public:
  explicit Searcher(const Eigen::Matrix3Xd& to) : to_(to) {
    if (to.cols() > kBruteForceLimit) tree_.emplace_back(to);
  }
  [[nodiscard]] KdTree::Hit nearest(const Eigen::Vector3d& q) const {
    if (!tree_.empty()) return tree_.front().nearest(q);
    KdTree::Hit best{-1, std::numeric_limits<double>::infinity()};
    for (Eigen::Index j = 0; j < to_.cols(); ++j) {
      const double d = (to_.col(j) - q).squaredNorm();
      if (d < best.squared_distance) best = {j, d};
    }
    return best;
  }

 private:
  const Eigen::Matrix3Xd& to_;
  std::vector<KdTree> tree_;
};

double mean_nn_distance(const Eigen::Matrix3Xd& from, const Searcher& to) {
  double s = 0.0;
  for (Eigen::Index j = 0; j < from.cols(); ++j) s += std::sqrt(to.nearest(from.col(j)).squared_distance);
  return s / static_cast<double>(from.cols());
}

void require_cloud(const PointCloud& c, const char* what) {
  if (c.size() == 0) throw Error(ErrorCode::DegenerateCloud, std::string(what) + ": empty point cloud");
  if (!c.points.allFinite()) throw Error(ErrorCode::DegenerateCloud, std::string(what) + ": non-finite point");
}

void require_non_collinear(const PointCloud& c) {
  if (c.size() < 3) throw Error(ErrorCode::DegenerateCloud, "icp: need at least 3 points");
  const Eigen::Vector3d mu = c.points.rowwise().mean();
  const Eigen::Matrix3Xd x = c.points.colwise() - mu;
  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(x * x.transpose());
  const Eigen::Vector3d ev = eig.eigenvalues();
  if (!(ev(1) > 1e-12 * std::max(ev(2), 1e-300))) {
    throw Error(ErrorCode::DegenerateCloud, "icp: point cloud is collinear");
  }
}

geom::SimilarityTransform from_matrix(const Eigen::Matrix4d& m) {
  geom::SimilarityTransform t;
  const Eigen::Matrix3d sr = m.topLeftCorner<3, 3>();
  t.scale = std::cbrt(sr.determinant());
  t.rotation = sr / t.scale;
  t.translation = m.topRightCorner<3, 1>();
  return t;
}

Eigen::Matrix3Xd strided(const Eigen::Matrix3Xd& pts, Eigen::Index n) {
  if (pts.cols() <= n) return pts;
  Eigen::Matrix3Xd out(3, n);
  for (Eigen::Index i = 0; i < n; ++i) out.col(i) = pts.col(i * pts.cols() / n);
  return out;
}

// Correspondences are taken in both directions (pred -> gt and gt -> pred);
// with one-sided matching the scale can shrink until pred collapses onto a
// single gt point at zero residual.
AlignResult run_icp(const Eigen::Matrix3Xd& src, const Eigen::Matrix3Xd& dst, const Searcher& search,
                    const geom::SimilarityTransform& init, const IcpOptions& opt) {
  AlignResult r;
  r.transform = init;
  const Eigen::Index ns = src.cols(), nd = dst.cols();
  Eigen::Matrix3Xd from(3, ns + nd), to(3, ns + nd);
  from.rightCols(nd) = dst;
  to.leftCols(ns) = src;
  for (int it = 0;; ++it) {
    const Eigen::Matrix3Xd cur = r.transform.apply(src);
    const Searcher back(cur);
    double res = 0.0;
    for (Eigen::Index j = 0; j < ns; ++j) {
      const KdTree::Hit h = search.nearest(cur.col(j));
      res += h.squared_distance;
      from.col(j) = src.col(j);
      to.col(j) = dst.col(h.index);
    }
    for (Eigen::Index j = 0; j < nd; ++j) {
      const KdTree::Hit h = back.nearest(dst.col(j));
      res += h.squared_distance;
      from.col(ns + j) = src.col(h.index);
      to.col(ns + j) = dst.col(j);
    }
    res /= static_cast<double>(ns + nd);
    const bool stalled =
        !r.residual_history.empty() && r.residual_history.back() - res <= opt.tol * r.residual_history.back();
    r.residual_history.push_back(res);
    r.residual = res;
    r.iterations = it;
    if (it >= opt.max_iter || res == 0.0 || stalled) break;
    r.transform = from_matrix(Eigen::umeyama(from, to, true));
  }
  r.aligned.points = r.transform.apply(src);
  return r;
}

}  // namespace

KdTree::KdTree(const Eigen::Matrix3Xd& points) : points_(points), order_(static_cast<std::size_t>(points.cols())) {
  std::iota(order_.begin(), order_.end(), 0);
  if (!order_.empty()) build(0, static_cast<int>(order_.size()));
}

int KdTree::build(int begin, int end) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back(Node{-1, 0.0, -1, -1, begin, end});
  if (end - begin <= kLeafSize) return id;
  Eigen::Vector3d lo = Eigen::Vector3d::Constant(std::numeric_limits<double>::infinity());
  Eigen::Vector3d hi = -lo;
  for (int i = begin; i < end; ++i) {
    lo = lo.cwiseMin(points_.col(order_[i]));
    hi = hi.cwiseMax(points_.col(order_[i]));
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  const int mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](int a, int b) { return points_(axis, a) < points_(axis, b); });
  const double split = points_(axis, order_[mid]);
  const int left = build(begin, mid);
  const int right = build(mid, end);
  nodes_[id].axis = axis;
  nodes_[id].split = split;
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

void KdTree::search(int node, const Eigen::Vector3d& q, Hit& best) const {
  const Node& n = nodes_[node];
  if (n.axis < 0) {
    for (int i = n.begin; i < n.end; ++i) {
      const double d = (points_.col(order_[i]) - q).squaredNorm();
      if (d < best.squared_distance || (d == best.squared_distance && order_[i] < best.index)) {
        best = {order_[i], d};
      }
    }
    return;
  }
  const double diff = q(n.axis) - n.split;
  const int first = diff < 0.0 ? n.left : n.right;
  const int second = diff < 0.0 ? n.right : n.left;
  search(first, q, best);
  if (diff * diff <= best.squared_distance) search(second, q, best);
}

KdTree::Hit KdTree::nearest(const Eigen::Vector3d& q) const {
  Hit best{-1, std::numeric_limits<double>::infinity()};
  if (!nodes_.empty()) search(0, q, best);
  return best;
}

std::vector<KdTree::Hit> nearest_neighbors(const Eigen::Matrix3Xd& from, const Eigen::Matrix3Xd& to) {
  const Searcher s(to);
  std::vector<KdTree::Hit> out(static_cast<std::size_t>(from.cols()));
  for (Eigen::Index j = 0; j < from.cols(); ++j) out[static_cast<std::size_t>(j)] = s.nearest(from.col(j));
  return out;
}

double total_variance(const Eigen::Matrix3Xd& pts) {
  const Eigen::Vector3d mu = pts.rowwise().mean();
  return (pts.colwise() - mu).squaredNorm() / static_cast<double>(pts.cols());
}

PointCloud variance_normalize(const PointCloud& pred, const PointCloud& gt, bool per_axis) {
  require_cloud(pred, "variance_normalize");
  require_cloud(gt, "variance_normalize");
  const Eigen::Vector3d mp = pred.points.rowwise().mean();
  const Eigen::Vector3d mg = gt.points.rowwise().mean();
  const Eigen::Matrix3Xd xp = pred.points.colwise() - mp;
  const Eigen::Matrix3Xd xg = gt.points.colwise() - mg;
  Eigen::Vector3d scale;
  if (per_axis) {
    const Eigen::Vector3d vp = xp.rowwise().squaredNorm() / static_cast<double>(xp.cols());
    const Eigen::Vector3d vg = xg.rowwise().squaredNorm() / static_cast<double>(xg.cols());
    if ((vp.array() <= 0.0).any()) throw Error(ErrorCode::DegenerateCloud, "variance_normalize: zero axis variance");
    scale = (vg.array() / vp.array()).sqrt();
  } else {
    const double vp = xp.squaredNorm() / static_cast<double>(xp.cols());
    const double vg = xg.squaredNorm() / static_cast<double>(xg.cols());
    if (!(vp > 0.0) || !(vg > 0.0)) throw Error(ErrorCode::DegenerateCloud, "variance_normalize: zero variance");
    scale.setConstant(std::sqrt(vg / vp));
  }
  PointCloud out;
  out.points = (scale.asDiagonal() * xp).colwise() + mg;
  return out;
}

const std::vector<Eigen::Matrix3d>& octahedral_rotations() {
  static const std::vector<Eigen::Matrix3d> rots = [] {
    std::vector<Eigen::Matrix3d> out;
    std::array<int, 3> perm{0, 1, 2};
    do {
      for (int signs = 0; signs < 8; ++signs) {
        Eigen::Matrix3d m = Eigen::Matrix3d::Zero();
        for (int i = 0; i < 3; ++i) m(i, perm[i]) = (signs >> i) & 1 ? -1.0 : 1.0;
        if (m.determinant() > 0.0) out.push_back(m);
      }
    } while (std::next_permutation(perm.begin(), perm.end()));
    return out;
  }();
  return rots;
}

AlignResult icp_from(const PointCloud& pred, const PointCloud& gt, const geom::SimilarityTransform& init,
                     const IcpOptions& opt) {
  require_cloud(pred, "icp");
  require_cloud(gt, "icp");
  require_non_collinear(pred);
  require_non_collinear(gt);
  const Searcher s(gt.points);
  return run_icp(pred.points, gt.points, s, init, opt);
}

AlignResult icp_align(const PointCloud& pred, const PointCloud& gt, const IcpOptions& opt) {
  require_cloud(pred, "icp");
  require_cloud(gt, "icp");
  require_non_collinear(pred);
  require_non_collinear(gt);
  const bool coarse = opt.restart_points > 0 && (pred.size() > opt.restart_points || gt.size() > opt.restart_points);
  const Eigen::Matrix3Xd src = coarse ? strided(pred.points, opt.restart_points) : pred.points;
  const Eigen::Matrix3Xd dst = coarse ? strided(gt.points, opt.restart_points) : gt.points;
  const Eigen::Vector3d mp = src.rowwise().mean();
  const Eigen::Vector3d mg = dst.rowwise().mean();
  const Searcher s(dst);
  AlignResult best;
  best.residual = std::numeric_limits<double>::infinity();
  for (const Eigen::Matrix3d& r0 : octahedral_rotations()) {
    geom::SimilarityTransform init;
    init.rotation = r0;
    init.translation = mg - r0 * mp;
    AlignResult r = run_icp(src, dst, s, init, opt);
    if (r.residual < best.residual) best = std::move(r);
  }
  if (!coarse) return best;
  const Searcher full(gt.points);
  return run_icp(pred.points, gt.points, full, best.transform, opt);
}

double chamfer_symmetric(const PointCloud& pred_aligned, const PointCloud& gt) {
  require_cloud(pred_aligned, "chamfer");
  require_cloud(gt, "chamfer");
  const Searcher to_gt(gt.points);
  const Searcher to_pred(pred_aligned.points);
  return 0.5 * (mean_nn_distance(pred_aligned.points, to_gt) + mean_nn_distance(gt.points, to_pred));
}

double d_pcl(const PointCloud& pred, const PointCloud& gt, const IcpOptions& opt) {
  const PointCloud normalized = variance_normalize(pred, gt);
  const AlignResult a = icp_align(normalized, gt, opt);
  return chamfer_symmetric(a.aligned, gt);
}

double depth_error(const DepthMap& pred, const DepthMap& gt, const Mask& omega) {
  if (pred.height != gt.height || pred.width != gt.width || omega.height != gt.height || omega.width != gt.width) {
    throw Error(ErrorCode::DimMismatch, "depth_error: size mismatch");
  }
  std::vector<double> p, g;
  for (int r = 0; r < gt.height; ++r) {
    for (int c = 0; c < gt.width; ++c) {
      if (!omega.at(r, c)) continue;
      p.push_back(pred.at(r, c));
      g.push_back(gt.at(r, c));
    }
  }
  if (p.empty()) throw Error(ErrorCode::DegenerateDepth, "depth_error: empty mask");
  const Eigen::Map<const Eigen::ArrayXd> pa(p.data(), static_cast<Eigen::Index>(p.size()));
  const Eigen::Map<const Eigen::ArrayXd> ga(g.data(), static_cast<Eigen::Index>(g.size()));
  if (!pa.allFinite() || !ga.allFinite()) throw Error(ErrorCode::DegenerateDepth, "depth_error: non-finite depth");
  const double mp = pa.mean(), mg = ga.mean();
  const double sp = std::sqrt((pa - mp).square().mean());
  const double sg = std::sqrt((ga - mg).square().mean());
  if (!(sp > 0.0)) throw Error(ErrorCode::DegenerateDepth, "depth_error: predicted depth is constant on the mask");
  return (((pa - mp) / sp) * sg + mg - ga).abs().mean();
}

void write_ply(const std::string& path, const PointCloud& cloud) {
  std::ofstream os(path);
  if (!os) throw Error(ErrorCode::IoError, "cannot write " + path);
  os << "ply\nformat ascii 1.0\nelement vertex " << cloud.size()
     << "\nproperty double x\nproperty double y\nproperty double z\nend_header\n"
     << std::setprecision(17);
  for (Eigen::Index j = 0; j < cloud.size(); ++j) {
    os << cloud.points(0, j) << ' ' << cloud.points(1, j) << ' ' << cloud.points(2, j) << '\n';
  }
  if (!os) throw Error(ErrorCode::IoError, "write failed: " + path);
}

PointCloud read_ply(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::IoError, "cannot read " + path);
  std::string line;
  Eigen::Index n = -1;
  while (std::getline(is, line) && line != "end_header") {
    std::istringstream ls(line);
    std::string a, b;
    ls >> a >> b;
    if (a == "element" && b == "vertex") ls >> n;
  }
  if (n < 0) throw Error(ErrorCode::IoError, "ply: missing vertex count in " + path);
  PointCloud c;
  c.points.resize(3, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    if (!(is >> c.points(0, j) >> c.points(1, j) >> c.points(2, j))) {
      throw Error(ErrorCode::IoError, "ply: truncated vertex list in " + path);
    }
  }
  return c;
}

void write_depth(const std::string& path, const DepthMap& depth) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::IoError, "cannot write " + path);
  std::vector<long> runs;
  std::uint8_t cur = 0;
  long len = 0;
  for (std::uint8_t v : depth.valid.data) {
    if (v != cur) {
      runs.push_back(len);
      cur = v;
      len = 0;
    }
    ++len;
  }
  runs.push_back(len);
  os << "c3dm-depth 1\n" << depth.height << ' ' << depth.width << '\n' << runs.size();
  for (long r : runs) os << ' ' << r;
  os << '\n';
  nn::write_doubles(os, depth.values.data(), static_cast<std::size_t>(depth.values.size()));
}

DepthMap read_depth(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::IoError, "cannot read " + path);
  std::string magic, dims, rle;
  if (!std::getline(is, magic) || magic != "c3dm-depth 1" || !std::getline(is, dims) || !std::getline(is, rle)) {
    throw Error(ErrorCode::IoError, "depth: bad header in " + path);
  }
  int h = 0, w = 0;
  std::istringstream(dims) >> h >> w;
  DepthMap d(h, w);
  std::istringstream rs(rle);
  std::size_t n = 0;
  rs >> n;
  std::size_t pos = 0;
  std::uint8_t cur = 0;
  for (std::size_t i = 0; i < n; ++i) {
    long len = 0;
    rs >> len;
    if (pos + static_cast<std::size_t>(len) > d.valid.data.size()) throw Error(ErrorCode::IoError, "depth: bad mask");
    std::fill_n(d.valid.data.begin() + static_cast<std::ptrdiff_t>(pos), len, cur);
    pos += static_cast<std::size_t>(len);
    cur = cur ? 0 : 1;
  }
  if (!rs || pos != d.valid.data.size()) throw Error(ErrorCode::IoError, "depth: bad mask run lengths");
  nn::read_doubles(is, d.values.data(), static_cast<std::size_t>(d.values.size()));
  return d;
}

}  // namespace c3dm::metrics
