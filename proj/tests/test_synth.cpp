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
#include "c3dm/losses.hpp"
#include "c3dm/metrics.hpp"
#include "c3dm/synth.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <numeric>
#include <random>

namespace c3dm::synth {
namespace {

constexpr double kPi = std::numbers::pi;

CategorySpec small_spec(geom::CameraKind cam = geom::CameraKind::Perspective) {
  CategorySpec s;
  s.seed = 42;
  s.n_instances = 3;
  s.views_per_instance = 2;
  s.height = 32;
  s.width = 32;
  s.camera = cam;
  return s;
}

const Dataset& perspective_dataset() {
  static const Dataset ds = generate_category(small_spec());
  return ds;
}

void expect_invalid(CategorySpec s, const std::string& field) {
  try {
    s.validate();
    FAIL() << "accepted invalid " << field;
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidSpec);
    EXPECT_NE(std::string(e.what()).find(field), std::string::npos) << e.what();
  }
}

TEST(CategorySpecTest, RejectsInvalidFieldsByName) {
  CategorySpec s;
  s.D = 0;
  expect_invalid(s, "D");
  s = {};
  s.K_kp = 3;
  expect_invalid(s, "K_kp");
  s = {};
  s.sigma_d = -1.0;
  expect_invalid(s, "sigma_d");
  s = {};
  s.descriptor_dim = 3;
  expect_invalid(s, "descriptor_dim");
  EXPECT_NO_THROW(CategorySpec{}.validate());
}

TEST(CategorySpecTest, JsonRoundTripAndUnknownField) {
  CategorySpec s = small_spec(geom::CameraKind::Orthographic);
  s.sigma_l = 0.25;
  EXPECT_EQ(spec_from_json(to_json(s)), s);
  EXPECT_EQ(spec_from_json("{}"), CategorySpec{});
  EXPECT_THROW((void)spec_from_json(R"({"D": 3, "rank": 2})"), Error);
  try {
    (void)spec_from_json(R"({"D": 0})");
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("D"), std::string::npos);
  }
}

TEST(GroundTruth, DescriptorsPreserveEmbeddingDistanceRanks) {
  const GroundTruthCategory gt = make_ground_truth(CategorySpec{});
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> dk, dd;
  for (int i = 0; i < 2000; ++i) {
    const Eigen::Vector3d a = Eigen::Vector3d(n(rng), n(rng), n(rng)).normalized();
    const Eigen::Vector3d b = Eigen::Vector3d(n(rng), n(rng), n(rng)).normalized();
    dk.push_back((a - b).norm());
    dd.push_back((gt.descriptor(a) - gt.descriptor(b)).norm());
  }
  auto ranks = [](const std::vector<double>& x) {
    std::vector<int> idx(x.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](int i, int j) { return x[i] < x[j]; });
    std::vector<double> r(x.size());
    for (std::size_t i = 0; i < idx.size(); ++i) r[static_cast<std::size_t>(idx[i])] = static_cast<double>(i);
    return r;
  };
  const std::vector<double> rk = ranks(dk), rd = ranks(dd);
  const double n_pairs = static_cast<double>(rk.size());
  double d2 = 0.0;
  for (std::size_t i = 0; i < rk.size(); ++i) d2 += (rk[i] - rd[i]) * (rk[i] - rd[i]);
  const double spearman = 1.0 - 6.0 * d2 / (n_pairs * (n_pairs * n_pairs - 1.0));
  EXPECT_GT(spearman, 0.9);
}

TEST(GroundTruth, PointJacobianMatchesFiniteDifferences) {
  const GroundTruthCategory gt = make_ground_truth(CategorySpec{});
  const Eigen::Vector3d k = Eigen::Vector3d(0.3, -0.5, 0.8).normalized();
  const Eigen::VectorXd alpha = gt.instances[0].alpha;
  const Eigen::Matrix3d j = gt.point_jacobian(k, alpha);
  const double h = 1e-6;
  for (int i = 0; i < 3; ++i) {
    const Eigen::Vector3d e = Eigen::Vector3d::Unit(i) * h;
    const Eigen::Vector3d fd = (gt.point(k + e, alpha) - gt.point(k - e, alpha)) / (2 * h);
    EXPECT_LT((fd - j.col(i)).norm(), 1e-7);
  }
}

TEST(GroundTruth, InstancesAreDistinctShapes) {
  CategorySpec s;
  s.n_instances = 20;
  const GroundTruthCategory gt = make_ground_truth(s);
  ASSERT_EQ(gt.instances.size(), 20u);
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Matrix3Xd ks(3, 300);
  for (int i = 0; i < ks.cols(); ++i) ks.col(i) = Eigen::Vector3d(n(rng), n(rng), n(rng)).normalized();
  std::vector<metrics::PointCloud> clouds;
  for (const Instance& inst : gt.instances) {
    metrics::PointCloud c{Eigen::Matrix3Xd(3, ks.cols())};
    for (int i = 0; i < ks.cols(); ++i) c.points.col(i) = gt.point(ks.col(i), inst.alpha);
    clouds.push_back(c);
  }
  for (std::size_t a = 0; a < clouds.size(); ++a) {
    for (std::size_t b = 0; b < a; ++b) {
      EXPECT_NE(gt.instances[a].alpha, gt.instances[b].alpha);
      EXPECT_GT(metrics::chamfer_symmetric(clouds[a], clouds[b]), 0.0);
    }
  }
}

TEST(Generate, SameSeedGivesIdenticalDatasets) {
  CategorySpec s = small_spec();
  s.sigma_d = 0.05;
  s.sigma_l = 0.05;
  const Dataset a = generate_category(s);
  const Dataset b = generate_category(s);
  ASSERT_EQ(a.frames.size(), b.frames.size());
  for (std::size_t i = 0; i < a.frames.size(); ++i) {
    EXPECT_EQ(a.frames[i].color.data, b.frames[i].color.data);
    EXPECT_EQ(a.frames[i].descriptors, b.frames[i].descriptors);
    EXPECT_EQ(a.frames[i].mask.data, b.frames[i].mask.data);
    EXPECT_EQ(a.labels[i].basis_star, b.labels[i].basis_star);
    EXPECT_EQ(a.labels[i].rotation_star, b.labels[i].rotation_star);
  }
  s.seed += 1;
  EXPECT_NE(generate_category(s).frames[0].descriptors, a.frames[0].descriptors);
}

TEST(Generate, FramesAreWellFormed) {
  const Dataset& ds = perspective_dataset();
  ASSERT_EQ(ds.frames.size(), 6u);
  for (const Frame& fr : ds.frames) {
    EXPECT_GT(fr.mask.count(), 20u);
    for (int r = 0; r < fr.height; ++r) {
      for (int c = 0; c < fr.width; ++c) {
        if (!fr.mask.at(r, c)) continue;
        EXPECT_NEAR(fr.kappa.col(fr.pixel_index(r, c)).norm(), 1.0, 1e-12);
        EXPECT_GT(fr.depth(fr.pixel_index(r, c)), 0.0);
      }
    }
    for (Eigen::Index j = 0; j < fr.keypoints.cols(); ++j) {
      if (!fr.keypoint_visible[static_cast<std::size_t>(j)]) continue;
      EXPECT_GE(fr.keypoints(0, j), 0.0);
      EXPECT_GE(fr.keypoints(1, j), 0.0);
      EXPECT_LE(fr.keypoints(0, j), fr.width - 1.0);
      EXPECT_LE(fr.keypoints(1, j), fr.height - 1.0);
    }
  }
}

TEST(Generate, KeypointsAreExactProjectionsOfAnchors) {
  const Dataset& ds = perspective_dataset();
  for (const Frame& fr : ds.frames) {
    for (Eigen::Index j = 0; j < fr.keypoints.cols(); ++j) {
      const Eigen::Vector3d x =
          fr.pose.rotation * (ds.gt.basis_at(ds.gt.anchors.col(j)) * fr.alpha) + fr.pose.translation;
      const Eigen::Vector2d y = geom::project<double>(fr.camera, x) + fr.origin;
      EXPECT_EQ(fr.keypoints.col(j), y);
    }
  }
}

class NoiseFreeConsistency : public ::testing::TestWithParam<geom::CameraKind> {};

TEST_P(NoiseFreeConsistency, GroundTruthZeroesPriorAndReprojection) {
  const Dataset ds = generate_category(small_spec(GetParam()));
  const losses::LossConfig cfg;
  const losses::LossWeights w;
  for (std::size_t i = 0; i < ds.frames.size(); ++i) {
    const Frame& fr = ds.frames[i];
    const losses::NrsfmLabels& lab = ds.labels[i];
    Eigen::MatrixXd kp_basis(3 * ds.gt.D, ds.gt.anchors.cols());
    for (Eigen::Index j = 0; j < kp_basis.cols(); ++j) kp_basis.col(j) = ds.gt.basis_flat(ds.gt.anchors.col(j));
    EXPECT_LT(losses::prior_loss<double>(kp_basis, fr.alpha, fr.pose.rotation, lab, cfg, w), 1e-10);

    std::vector<Eigen::Vector2d> ys;
    std::vector<Eigen::Vector3d> xs;
    for (int r = 0; r < fr.height; ++r) {
      for (int c = 0; c < fr.width; ++c) {
        if (!fr.mask.at(r, c)) continue;
        ys.emplace_back(Eigen::Vector2d(c, r) - fr.origin);
        xs.push_back(ds.gt.point(fr.kappa.col(fr.pixel_index(r, c)), fr.alpha));
      }
    }
    Eigen::Matrix2Xd y(2, static_cast<Eigen::Index>(ys.size()));
    Eigen::Matrix3Xd x(3, static_cast<Eigen::Index>(xs.size()));
    for (std::size_t k = 0; k < ys.size(); ++k) {
      y.col(static_cast<Eigen::Index>(k)) = ys[k];
      x.col(static_cast<Eigen::Index>(k)) = xs[k];
    }
    const auto rp = losses::reprojection_loss<double>(x, fr.pose.rotation, fr.camera, y, cfg);
    EXPECT_LT(rp.value, 1e-10);
    EXPECT_LT((rp.translation - fr.pose.translation).norm(), 1e-8);
  }
}

INSTANTIATE_TEST_SUITE_P(Cameras, NoiseFreeConsistency,
                         ::testing::Values(geom::CameraKind::Perspective, geom::CameraKind::Orthographic));

TEST(Generate, LabelNoiseMovesLabels) {
  CategorySpec s = small_spec();
  s.sigma_l = 0.1;
  const Dataset ds = generate_category(s);
  const losses::NrsfmLabels& lab = ds.labels[0];
  EXPECT_GT((lab.alpha_star - ds.frames[0].alpha).norm(), 0.0);
  EXPECT_TRUE(geom::is_rotation(lab.rotation_star));
  EXPECT_GT((lab.rotation_star - ds.frames[0].pose.rotation).norm(), 0.0);
}

TEST(UpwardAxis, RotationsAboutZ) {
  std::vector<Eigen::Matrix3d> rs;
  for (double a : {0.3, 1.0, 2.0, -0.7}) rs.push_back(geom::axis_angle(Eigen::Vector3d::UnitZ(), a));
  EXPECT_LT((upward_axis(rs) - Eigen::Vector3d::UnitZ()).norm(), 1e-12);
  rs.push_back(geom::axis_angle(-Eigen::Vector3d::UnitZ(), 0.5));
  EXPECT_LT((upward_axis(rs) - Eigen::Vector3d::UnitZ()).norm(), 1e-12);
}

TEST(UpwardAxis, JitteredAroundY) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> ang(0.2, 3.0), jit(-5.0 * kPi / 180.0, 5.0 * kPi / 180.0);
  std::vector<Eigen::Matrix3d> rs;
  for (int i = 0; i < 100; ++i) {
    const Eigen::Vector3d axis =
        geom::axis_angle(Eigen::Vector3d::UnitX(), jit(rng)) * geom::axis_angle(Eigen::Vector3d::UnitZ(), jit(rng)) *
        Eigen::Vector3d::UnitY();
    rs.push_back(geom::axis_angle(i % 2 ? axis : Eigen::Vector3d(-axis), ang(rng)));
  }
  const double angle = std::acos(std::clamp(upward_axis(rs).dot(Eigen::Vector3d::UnitY()), -1.0, 1.0));
  EXPECT_LT(angle, 5.0 * kPi / 180.0);
}

TEST(UpwardAxis, NearIdentityRotationsThrow) {
  const std::vector<Eigen::Matrix3d> rs(5, Eigen::Matrix3d::Identity());
  try {
    (void)upward_axis(rs);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegenerateRotations);
  }
}

TEST(AzimuthTest, AnalyticCases) {
  const Eigen::Vector3d up = Eigen::Vector3d(0.2, 1.0, -0.3).normalized();
  for (double th : {0.1, 1.0, 3.0, 4.5, 6.2}) {
    const Azimuth a = azimuth(geom::axis_angle(up, th), up);
    EXPECT_FALSE(a.degenerate);
    EXPECT_NEAR(a.angle, th, 1e-12);
  }
  EXPECT_EQ(azimuth(Eigen::Matrix3d::Identity(), up).angle, 0.0);
  const Azimuth flip = azimuth(geom::axis_angle(Eigen::Vector3d::UnitX(), kPi), Eigen::Vector3d::UnitY());
  EXPECT_TRUE(flip.degenerate);
  EXPECT_EQ(flip.angle, 0.0);
}

TEST(AzimuthTest, EquivariantUnderRotationAboutUp) {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 2.0 * kPi);
  const Eigen::Vector3d up = Eigen::Vector3d::UnitY();
  for (int i = 0; i < 200; ++i) {
    const Eigen::Matrix3d r = geom::axis_angle(Eigen::Vector3d(n(rng), n(rng), n(rng)).normalized(), u(rng));
    const double phi = u(rng);
    const double base = azimuth(r, up).angle;
    const double moved = azimuth(r * geom::axis_angle(up, phi), up).angle;
    double diff = std::fmod(moved - base - phi, 2.0 * kPi);
    if (diff > kPi) diff -= 2.0 * kPi;
    if (diff < -kPi) diff += 2.0 * kPi;
    EXPECT_NEAR(diff, 0.0, 1e-9);
  }
}

TEST(Rebalance, AnalyticWeights) {
  std::vector<double> uniform;
  for (int i = 0; i < 64; ++i) uniform.push_back((i + 0.5) * 2.0 * kPi / 64);
  const std::vector<double> w = rebalance_weights(uniform);
  for (double x : w) EXPECT_DOUBLE_EQ(x, w[0]);

  std::vector<double> skew(90, 0.1);
  skew.insert(skew.end(), 10, 3.0);
  const std::vector<double> ws = rebalance_weights(skew);
  EXPECT_DOUBLE_EQ(ws.back() / ws.front(), 9.0);
}

TEST(Rebalance, WeightedDrawsFlattenSkewedHistogram) {
  std::mt19937_64 rng(11);
  std::bernoulli_distribution major(0.8);
  std::normal_distribution<double> spread(0.0, 0.9);
  std::vector<double> az;
  for (int i = 0; i < 4000; ++i) {
    double a = std::fmod((major(rng) ? 1.0 : 4.0) + spread(rng), 2.0 * kPi);
    if (a < 0) a += 2.0 * kPi;
    az.push_back(a);
  }
  const std::vector<double> w = rebalance_weights(az);
  std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
  std::vector<int> hist(kAzimuthBins, 0);
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) {
    ++hist[static_cast<std::size_t>(std::min(kAzimuthBins - 1, static_cast<int>(az[pick(rng)] / (2 * kPi) * kAzimuthBins)))];
  }
  const double p = 1.0 / kAzimuthBins;
  const double sigma = std::sqrt(draws * p * (1 - p));
  for (int h : hist) EXPECT_LT(std::abs(h - draws * p), 3.0 * sigma);
}

TEST(Batches, InfeasibleDistinctInstances) {
  try {
    BatchSampler s({0, 0, 0}, {1, 1, 1}, 2, true);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InfeasibleConstraint);
  }
  EXPECT_THROW(BatchSampler({0, 1}, {1, 1}, 3, false), Error);
}

TEST(Batches, SizeAndDistinctness) {
  std::vector<int> inst;
  for (int i = 0; i < 40; ++i) inst.push_back(i / 3);
  const BatchSampler s(inst, std::vector<double>(inst.size(), 1.0), 10, true);
  std::mt19937_64 rng(8);
  for (int b = 0; b < 500; ++b) {
    const std::vector<int> batch = s.next(rng);
    ASSERT_EQ(batch.size(), 10u);
    std::vector<int> seen;
    for (int f : batch) seen.push_back(inst[static_cast<std::size_t>(f)]);
    std::sort(seen.begin(), seen.end());
    EXPECT_EQ(std::adjacent_find(seen.begin(), seen.end()), seen.end());
  }
}

TEST(Batches, ZeroWeightFramesNeverDrawn) {
  const BatchSampler s({0, 1, 2, 3}, {1, 0, 1, 1}, 3, false);
  std::mt19937_64 rng(9);
  for (int b = 0; b < 200; ++b) {
    const std::vector<int> batch = s.next(rng);
    EXPECT_EQ(std::count(batch.begin(), batch.end(), 1), 0);
  }
}

TEST(Batches, EqualWeightsGiveUniformFrequencies) {
  const int n = 20, size = 10, batches = 100000;
  std::vector<int> inst(n);
  std::iota(inst.begin(), inst.end(), 0);
  const BatchSampler s(inst, std::vector<double>(n, 1.0), size, false);
  std::mt19937_64 rng(10);
  std::vector<int> count(n, 0);
  for (int b = 0; b < batches; ++b) {
    for (int f : s.next(rng)) ++count[static_cast<std::size_t>(f)];
  }
  const double p = static_cast<double>(size) / n;
  const double sigma = std::sqrt(batches * p * (1 - p));
  for (int c : count) EXPECT_LT(std::abs(c - batches * p), 3.0 * sigma);
}

TEST(DatasetIo, RoundTrip) {
  const Dataset& ds = perspective_dataset();
  const auto dir = std::filesystem::temp_directory_path() / "c3dm_test_dataset";
  std::filesystem::remove_all(dir);
  save_dataset(dir.string(), ds);
  for (const char* f : {"category.json", "labels.json", "keypoints.csv", "frames/frame_00000.bin"}) {
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  }
  const Dataset back = load_dataset(dir.string());
  EXPECT_EQ(back.spec, ds.spec);
  EXPECT_EQ(back.gt.basis_coeffs, ds.gt.basis_coeffs);
  EXPECT_EQ(back.gt.instance_mix, ds.gt.instance_mix);
  ASSERT_EQ(back.frames.size(), ds.frames.size());
  for (std::size_t i = 0; i < ds.frames.size(); ++i) {
    const Frame& a = ds.frames[i];
    const Frame& b = back.frames[i];
    EXPECT_EQ(a.color.data, b.color.data);
    EXPECT_EQ(a.mask.data, b.mask.data);
    EXPECT_EQ(a.depth, b.depth);
    EXPECT_EQ(a.kappa, b.kappa);
    EXPECT_EQ(a.descriptors, b.descriptors);
    EXPECT_EQ(a.instance_descriptor, b.instance_descriptor);
    EXPECT_EQ(a.keypoint_descriptors, b.keypoint_descriptors);
    EXPECT_EQ(a.keypoints, b.keypoints);
    EXPECT_EQ(a.keypoint_visible, b.keypoint_visible);
    EXPECT_EQ(a.pose.rotation, b.pose.rotation);
    EXPECT_EQ(a.camera.K, b.camera.K);
    EXPECT_EQ(a.origin, b.origin);
    EXPECT_EQ(ds.labels[i].basis_star, back.labels[i].basis_star);
    EXPECT_EQ(ds.labels[i].visible, back.labels[i].visible);
    EXPECT_EQ(ds.labels[i].rotation_star, back.labels[i].rotation_star);
  }
  std::filesystem::remove_all(dir);
  EXPECT_THROW((void)load_dataset(dir.string()), Error);
}

}  // namespace
}  // namespace c3dm::synth
