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
#include "c3dm/sph_harm.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

namespace c3dm::geom {
namespace {

Eigen::Vector3d random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  return Eigen::Vector3d(n(rng), n(rng), n(rng)).normalized();
}

TEST(RealSh, LowDegreesMatchTabulatedFormulas) {
  const double pi = std::numbers::pi;
  std::mt19937_64 rng(1);
  for (int i = 0; i < 50; ++i) {
    const Eigen::Vector3d p = random_unit(rng);
    const double x = p(0), y = p(1), z = p(2);
    const Eigen::VectorXd s = real_sh<double>(p, 2);
    ASSERT_EQ(s.size(), 9);
    const double c1 = std::sqrt(3.0 / (4.0 * pi));
    const double c2 = 0.5 * std::sqrt(15.0 / pi);
    EXPECT_NEAR(s(sh_index(0, 0)), 0.5 / std::sqrt(pi), 1e-14);
    EXPECT_NEAR(s(sh_index(1, -1)), c1 * y, 1e-14);
    EXPECT_NEAR(s(sh_index(1, 0)), c1 * z, 1e-14);
    EXPECT_NEAR(s(sh_index(1, 1)), c1 * x, 1e-14);
    EXPECT_NEAR(s(sh_index(2, -2)), c2 * x * y, 1e-14);
    EXPECT_NEAR(s(sh_index(2, -1)), c2 * y * z, 1e-14);
    EXPECT_NEAR(s(sh_index(2, 0)), 0.25 * std::sqrt(5.0 / pi) * (3.0 * z * z - 1.0), 1e-14);
    EXPECT_NEAR(s(sh_index(2, 1)), c2 * x * z, 1e-14);
    EXPECT_NEAR(s(sh_index(2, 2)), 0.5 * c2 * (x * x - y * y), 1e-14);
  }
}

// Fibonacci-lattice quadrature of the Gram matrix approaches the identity.
TEST(RealSh, OrthonormalOnTheSphere) {
  const int degree = 4;
  const int n = 40000;
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(sh_count(degree), sh_count(degree));
  for (int i = 0; i < n; ++i) {
    const double z = 1.0 - (2.0 * i + 1.0) / n;
    const double r = std::sqrt(1.0 - z * z);
    const Eigen::Vector3d p(r * std::cos(golden * i), r * std::sin(golden * i), z);
    const Eigen::VectorXd s = real_sh<double>(p, degree);
    gram += s * s.transpose();
  }
  gram *= 4.0 * std::numbers::pi / n;
  EXPECT_LT((gram - Eigen::MatrixXd::Identity(gram.rows(), gram.cols())).cwiseAbs().maxCoeff(), 1e-3);
}

TEST(RealSh, JacobianMatchesFiniteDifferences) {
  std::mt19937_64 rng(2);
  const int degree = 5;
  for (int i = 0; i < 20; ++i) {
    const Eigen::Vector3d p = random_unit(rng);
    const Eigen::MatrixXd jac = real_sh_jacobian(p, degree);
    const double h = 1e-6;
    for (int k = 0; k < 3; ++k) {
      Eigen::Vector3d a = p, b = p;
      a(k) += h;
      b(k) -= h;
      const Eigen::VectorXd fd = (real_sh<double>(a, degree) - real_sh<double>(b, degree)) / (2.0 * h);
      EXPECT_LT((jac.col(k) - fd).cwiseAbs().maxCoeff(), 1e-7);
    }
  }
}

}  // namespace
}  // namespace c3dm::geom
