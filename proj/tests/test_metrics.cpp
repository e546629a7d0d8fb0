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
#include "c3dm/error.hpp"
#include "c3dm/geom.hpp"
#include "c3dm/metrics.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <numbers>
#include <random>

namespace c3dm::metrics {
namespace {

Eigen::Matrix3Xd random_cloud(std::mt19937_64& rng, Eigen::Index n, const Eigen::Vector3d& sigma = Eigen::Vector3d(1.0, 0.6, 0.3)) {
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::Matrix3Xd p(3, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (int i = 0; i < 3; ++i) p(i, j) = sigma(i) * g(rng);
  }
  return p;
}

Eigen::Matrix3d random_rotation(std::mt19937_64& rng, double max_angle) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, max_angle);
  return geom::axis_angle(Eigen::Vector3d(g(rng), g(rng), g(rng)).normalized(), u(rng));
}

double brute_mean_nn(const Eigen::Matrix3Xd& a, const Eigen::Matrix3Xd& b) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < a.cols(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < b.cols(); ++j) best = std::min(best, (a.col(i) - b.col(j)).squaredNorm());
    s += std::sqrt(best);
  }
  return s / static_cast<double>(a.cols());
}

double two_pass_depth_error(const DepthMap& pred, const DepthMap& gt, const Mask& omega) {
  double n = 0.0, sp = 0.0, sg = 0.0;
  for (int r = 0; r < gt.height; ++r) {
    for (int c = 0; c < gt.width; ++c) {
      if (!omega.at(r, c)) continue;
      n += 1.0;
      sp += pred.at(r, c);
      sg += gt.at(r, c);
    }
  }
  const double mp = sp / n, mg = sg / n;
  double vp = 0.0, vg = 0.0;
  for (int r = 0; r < gt.height; ++r) {
    for (int c = 0; c < gt.width; ++c) {
      if (!omega.at(r, c)) continue;
      vp += (pred.at(r, c) - mp) * (pred.at(r, c) - mp);
      vg += (gt.at(r, c) - mg) * (gt.at(r, c) - mg);
    }
  }
  const double scale = std::sqrt(vg / vp);
  double err = 0.0;
  for (int r = 0; r < gt.height; ++r) {
    for (int c = 0; c < gt.width; ++c) {
      if (omega.at(r, c)) err += std::abs((pred.at(r, c) - mp) * scale + mg - gt.at(r, c));
    }
  }
  return err / n;
}

DepthMap random_depth(std::mt19937_64& rng, int h, int w) {
  std::uniform_real_distribution<double> u(2.0, 5.0);
  DepthMap d(h, w);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      d.at(r, c) = u(rng);
      d.valid.set(r, c, true);
    }
  }
  return d;
}

Mask random_mask(std::mt19937_64& rng, int h, int w) {
  std::bernoulli_distribution b(0.6);
  Mask m(h, w);
  for (auto& v : m.data) v = b(rng) ? 1 : 0;
  m.data[0] = 1;
  m.data[1] = 1;
  return m;
}

TEST(KdTree, MatchesBruteForceNeighbors) {
  std::mt19937_64 rng(1);
  const Eigen::Matrix3Xd pts = random_cloud(rng, 5000);
  const Eigen::Matrix3Xd queries = random_cloud(rng, 500, Eigen::Vector3d::Constant(1.2));
  const KdTree tree(pts);
  for (Eigen::Index q = 0; q < queries.cols(); ++q) {
    double best = std::numeric_limits<double>::infinity();
    Eigen::Index arg = -1;
    for (Eigen::Index j = 0; j < pts.cols(); ++j) {
      const double d = (pts.col(j) - queries.col(q)).squaredNorm();
      if (d < best) {
        best = d;
        arg = j;
      }
    }
    const KdTree::Hit h = tree.nearest(queries.col(q));
    EXPECT_EQ(h.squared_distance, best);
    EXPECT_EQ(h.index, arg);
  }
}

TEST(KdTree, DuplicatePointsAndSinglePoint) {
  Eigen::Matrix3Xd pts = Eigen::Matrix3Xd::Zero(3, 40);
  pts.col(7) << 1, 1, 1;
  const KdTree tree(pts);
  EXPECT_EQ(tree.nearest(Eigen::Vector3d(0.9, 1, 1)).index, 7);
  EXPECT_EQ(tree.nearest(Eigen::Vector3d(-1, 0, 0)).squared_distance, 1.0);
  const KdTree one(Eigen::Matrix3Xd::Ones(3, 1));
  EXPECT_EQ(one.nearest(Eigen::Vector3d::Zero()).squared_distance, 3.0);
}

TEST(Chamfer, SinglePointPair) {
  PointCloud a{Eigen::Matrix3Xd::Zero(3, 1)};
  PointCloud b{Eigen::Matrix3Xd::Zero(3, 1)};
  b.points(0, 0) = 1.0;
  EXPECT_DOUBLE_EQ(chamfer_symmetric(a, b), 1.0);
  EXPECT_EQ(chamfer_symmetric(a, a), 0.0);
}

TEST(Chamfer, MatchesBruteForceExactly) {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<Eigen::Index> size(1, 500);
  for (int trial = 0; trial < 50; ++trial) {
    const PointCloud a{random_cloud(rng, size(rng))};
    const PointCloud b{random_cloud(rng, size(rng))};
    const double oracle = 0.5 * (brute_mean_nn(a.points, b.points) + brute_mean_nn(b.points, a.points));
    EXPECT_EQ(chamfer_symmetric(a, b), oracle);
    EXPECT_EQ(chamfer_symmetric(a, b), chamfer_symmetric(b, a));
  }
}

TEST(Chamfer, IndexedPathMatchesBruteForce) {
  std::mt19937_64 rng(3);
  const PointCloud a{random_cloud(rng, 2500)};
  const PointCloud b{random_cloud(rng, 2100)};
  const double oracle = 0.5 * (brute_mean_nn(a.points, b.points) + brute_mean_nn(b.points, a.points));
  EXPECT_NEAR(chamfer_symmetric(a, b), oracle, 1e-12);
}

TEST(Chamfer, EmptyCloudThrows) {
  const PointCloud a{Eigen::Matrix3Xd(3, 0)};
  const PointCloud b{Eigen::Matrix3Xd::Zero(3, 2)};
  EXPECT_THROW((void)chamfer_symmetric(a, b), Error);
}

TEST(VarianceNormalize, MatchesGroundTruthVariance) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const PointCloud pred{random_cloud(rng, 300) * 3.7};
    PointCloud gt{random_cloud(rng, 200)};
    gt.points.colwise() += Eigen::Vector3d(1, -2, 0.5);
    const PointCloud out = variance_normalize(pred, gt);
    EXPECT_NEAR(total_variance(out.points), total_variance(gt.points), 1e-9);
    EXPECT_TRUE(out.points.rowwise().mean().isApprox(gt.points.rowwise().mean(), 1e-12));
  }
}

TEST(VarianceNormalize, IdentityAndDoubling) {
  std::mt19937_64 rng(5);
  const PointCloud gt{random_cloud(rng, 100)};
  EXPECT_LT((variance_normalize(gt, gt).points - gt.points).cwiseAbs().maxCoeff(), 1e-14);
  const PointCloud twice{2.0 * gt.points};
  EXPECT_LT((variance_normalize(twice, gt).points - gt.points).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(VarianceNormalize, PerAxisMatchesEachAxis) {
  std::mt19937_64 rng(6);
  const PointCloud pred{random_cloud(rng, 300)};
  const PointCloud gt{random_cloud(rng, 300, Eigen::Vector3d(0.2, 2.0, 0.7))};
  const PointCloud out = variance_normalize(pred, gt, true);
  for (int i = 0; i < 3; ++i) {
    const double vo = (out.points.row(i).array() - out.points.row(i).mean()).square().mean();
    const double vg = (gt.points.row(i).array() - gt.points.row(i).mean()).square().mean();
    EXPECT_NEAR(vo, vg, 1e-9);
  }
}

TEST(VarianceNormalize, ZeroVarianceThrows) {
  const PointCloud flat{Eigen::Matrix3Xd::Ones(3, 10)};
  std::mt19937_64 rng(7);
  const PointCloud gt{random_cloud(rng, 10)};
  try {
    (void)variance_normalize(flat, gt);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegenerateCloud);
  }
}

TEST(Octahedral, TwentyFourDistinctRotations) {
  const auto& rots = octahedral_rotations();
  ASSERT_EQ(rots.size(), 24u);
  for (std::size_t i = 0; i < rots.size(); ++i) {
    EXPECT_TRUE(geom::is_rotation(rots[i]));
    for (std::size_t j = 0; j < i; ++j) EXPECT_GT((rots[i] - rots[j]).norm(), 1.0);
  }
}

TEST(Icp, IdenticalCloudsGiveIdentity) {
  std::mt19937_64 rng(8);
  const PointCloud c{random_cloud(rng, 200)};
  const AlignResult r = icp_align(c, c);
  EXPECT_EQ(r.residual, 0.0);
  EXPECT_TRUE(r.transform.rotation.isApprox(Eigen::Matrix3d::Identity(), 1e-12));
  EXPECT_NEAR(r.transform.scale, 1.0, 1e-12);
}

TEST(Icp, RecoversSimilarityTransforms) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> s(0.3, 3.0);
  std::normal_distribution<double> g(0.0, 2.0);
  for (int trial = 0; trial < 20; ++trial) {
    const PointCloud pred{random_cloud(rng, 250)};
    geom::SimilarityTransform truth;
    truth.scale = s(rng);
    truth.rotation = random_rotation(rng, std::numbers::pi);
    truth.translation = Eigen::Vector3d(g(rng), g(rng), g(rng));
    const PointCloud gt{truth.apply(pred.points)};
    const AlignResult r = icp_align(pred, gt);
    EXPECT_LT(r.residual, 1e-8) << "trial " << trial;
    EXPECT_NEAR(r.transform.scale, truth.scale, 1e-6);
    EXPECT_LT((r.transform.rotation - truth.rotation).norm(), 1e-6);
  }
}

TEST(Icp, ResidualIsNonIncreasing) {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    const PointCloud pred{random_cloud(rng, 150)};
    const PointCloud gt{random_cloud(rng, 180, Eigen::Vector3d(0.8, 0.8, 0.5))};
    geom::SimilarityTransform init;
    init.rotation = random_rotation(rng, std::numbers::pi);
    const AlignResult r = icp_from(pred, gt, init, {});
    ASSERT_FALSE(r.residual_history.empty());
    for (std::size_t i = 1; i < r.residual_history.size(); ++i) {
      EXPECT_LE(r.residual_history[i], r.residual_history[i - 1] * (1.0 + 1e-12)) << "trial " << trial;
    }
    EXPECT_EQ(r.residual, r.residual_history.back());
  }
}

TEST(Icp, CollinearCloudThrows) {
  Eigen::Matrix3Xd line = Eigen::Matrix3Xd::Zero(3, 10);
  for (int j = 0; j < 10; ++j) line(0, j) = j;
  std::mt19937_64 rng(11);
  const PointCloud gt{random_cloud(rng, 10)};
  try {
    (void)icp_align(PointCloud{line}, gt);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegenerateCloud);
  }
  EXPECT_THROW((void)icp_align(PointCloud{Eigen::Matrix3Xd::Random(3, 2)}, gt), Error);
}

TEST(Icp, SubsampledRestartsAgreeWithFullRestarts) {
  std::mt19937_64 rng(12);
  const PointCloud pred{random_cloud(rng, 1200)};
  geom::SimilarityTransform truth;
  truth.scale = 1.7;
  truth.rotation = random_rotation(rng, std::numbers::pi);
  const PointCloud gt{truth.apply(pred.points)};
  IcpOptions opt;
  opt.restart_points = 300;
  EXPECT_LT(icp_align(pred, gt, opt).residual, 1e-8);
}

TEST(Dpcl, ExactlyInvariantToUniformScaling) {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> s(0.1, 10.0);
  for (int trial = 0; trial < 10; ++trial) {
    const PointCloud pred{random_cloud(rng, 200)};
    const PointCloud gt{random_cloud(rng, 220)};
    const double base = d_pcl(pred, gt);
    EXPECT_EQ(d_pcl(PointCloud{4.0 * pred.points}, gt), base);
    EXPECT_NEAR(d_pcl(PointCloud{s(rng) * pred.points}, gt), base, 1e-12 * std::max(1.0, base));
  }
}

TEST(Dpcl, InvariantToRecoverableRigidTransforms) {
  std::mt19937_64 rng(14);
  const auto& rots = octahedral_rotations();
  std::uniform_int_distribution<std::size_t> pick(0, rots.size() - 1);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    const PointCloud gt{random_cloud(rng, 120)};
    const Eigen::Matrix3d r = rots[pick(rng)] * random_rotation(rng, 10.0 * std::numbers::pi / 180.0);
    PointCloud pred{r * gt.points};
    pred.points.colwise() += Eigen::Vector3d(g(rng), g(rng), g(rng));
    const AlignResult a = icp_align(variance_normalize(pred, gt), gt);
    EXPECT_LT(a.residual, 1e-6) << "trial " << trial;
    EXPECT_LT(d_pcl(pred, gt), 1e-6) << "trial " << trial;
  }
}

TEST(DepthError, IdentityAndAffineInvariance) {
  std::mt19937_64 rng(15);
  const DepthMap gt = random_depth(rng, 12, 9);
  const Mask omega = random_mask(rng, 12, 9);
  EXPECT_EQ(depth_error(gt, gt, omega), 0.0);
  DepthMap affine = gt;
  affine.values = 3.0 * gt.values.array() + 7.0;
  EXPECT_NEAR(depth_error(affine, gt, omega), 0.0, 1e-14);
  const DepthMap pred = random_depth(rng, 12, 9);
  const double base = depth_error(pred, gt, omega);
  for (double a : {0.01, 0.5, 2.0, 1e3}) {
    DepthMap p2 = pred;
    p2.values = a * pred.values.array() - 4.0;
    EXPECT_NEAR(depth_error(p2, gt, omega), base, 1e-13);
  }
}

TEST(DepthError, MatchesTwoPassOracle) {
  std::mt19937_64 rng(16);
  for (int trial = 0; trial < 50; ++trial) {
    const DepthMap gt = random_depth(rng, 10, 14);
    const DepthMap pred = random_depth(rng, 10, 14);
    const Mask omega = random_mask(rng, 10, 14);
    EXPECT_NEAR(depth_error(pred, gt, omega), two_pass_depth_error(pred, gt, omega), 1e-12);
  }
}

TEST(DepthError, DegenerateInputsThrow) {
  std::mt19937_64 rng(17);
  const DepthMap gt = random_depth(rng, 4, 4);
  DepthMap flat_map(4, 4);
  flat_map.values.setConstant(2.0);
  const DepthMap& flat = flat_map;
  const Mask all(4, 4, true);
  const Mask none(4, 4, false);
  for (const auto& [p, m] : {std::pair{&gt, &none}, std::pair{&flat, &all}}) {
    try {
      (void)depth_error(*p, gt, *m);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::DegenerateDepth);
    }
  }
}

TEST(MetricsIo, PlyRoundTrip) {
  std::mt19937_64 rng(18);
  const PointCloud c{random_cloud(rng, 37)};
  const auto path = std::filesystem::temp_directory_path() / "c3dm_test_cloud.ply";
  write_ply(path.string(), c);
  const PointCloud back = read_ply(path.string());
  EXPECT_EQ(back.points, c.points);
  std::filesystem::remove(path);
}

TEST(MetricsIo, DepthRoundTrip) {
  std::mt19937_64 rng(19);
  DepthMap d = random_depth(rng, 7, 5);
  d.valid = random_mask(rng, 7, 5);
  d.valid.data[0] = 0;
  const auto path = std::filesystem::temp_directory_path() / "c3dm_test_depth.bin";
  write_depth(path.string(), d);
  const DepthMap back = read_depth(path.string());
  EXPECT_EQ(back.height, 7);
  EXPECT_EQ(back.width, 5);
  EXPECT_EQ(back.values, d.values);
  EXPECT_EQ(back.valid.data, d.valid.data);
  std::filesystem::remove(path);
}

TEST(MetricsIo, MissingFileThrows) {
  EXPECT_THROW((void)read_ply("/nonexistent/x.ply"), Error);
  EXPECT_THROW((void)read_depth("/nonexistent/x.bin"), Error);
}

}  // namespace
}  // namespace c3dm::metrics
