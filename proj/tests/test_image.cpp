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
#include "c3dm/image.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

namespace c3dm {
namespace {

TEST(Bilinear, IntegerCoordinatesReturnPixelValues) {
  Image img(4, 5, 2);
  for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<double>(i);
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 5; ++c) {
      const auto s = sample_bilinear<double>(img, static_cast<double>(c), static_cast<double>(r));
      EXPECT_FALSE(s.clamped);
      EXPECT_EQ(s.value(0), img.at(r, c, 0));
      EXPECT_EQ(s.value(1), img.at(r, c, 1));
    }
  }
}

TEST(Bilinear, AffineImageIsReproducedExactly) {
  Image img(6, 7, 1);
  for (int r = 0; r < 6; ++r) {
    for (int c = 0; c < 7; ++c) img.at(r, c) = 0.25 * c - 0.5 * r + 1.0;
  }
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 6.0), v(0.0, 5.0);
  for (int i = 0; i < 100; ++i) {
    const double uu = u(rng), vv = v(rng);
    EXPECT_NEAR(sample_bilinear<double>(img, uu, vv).value(0), 0.25 * uu - 0.5 * vv + 1.0, 1e-14);
  }
}

TEST(Bilinear, OutOfBoundsIsClampedAndFlagged) {
  Image img(3, 3, 1);
  img.at(0, 2) = 7.0;
  const auto s = sample_bilinear<double>(img, 10.0, -4.0);
  EXPECT_TRUE(s.clamped);
  EXPECT_EQ(s.value(0), 7.0);
}

TEST(GaussianBlur, PreservesConstantImages) {
  const Image img(9, 8, 3, 0.375);
  const Image b = gaussian_blur(img, 1.5);
  for (double v : b.data) EXPECT_NEAR(v, 0.375, 1e-15);
}

TEST(DistanceTransform, MatchesBruteForce) {
  std::mt19937_64 rng(4);
  std::bernoulli_distribution coin(0.1);
  Mask m(17, 23);
  for (int r = 0; r < m.height; ++r) {
    for (int c = 0; c < m.width; ++c) m.set(r, c, coin(rng));
  }
  const Image d = distance_transform(m);
  for (int r = 0; r < m.height; ++r) {
    for (int c = 0; c < m.width; ++c) {
      double best = std::numeric_limits<double>::infinity();
      for (int rr = 0; rr < m.height; ++rr) {
        for (int cc = 0; cc < m.width; ++cc) {
          if (m.at(rr, cc)) best = std::min(best, std::hypot(rr - r, cc - c));
        }
      }
      EXPECT_NEAR(d.at(r, c), best, 1e-9);
    }
  }
}

TEST(DistanceTransform, EmptyMaskIsInfinite) {
  const Image d = distance_transform(Mask(3, 4));
  for (double v : d.data) EXPECT_TRUE(std::isinf(v));
}

}  // namespace
}  // namespace c3dm
