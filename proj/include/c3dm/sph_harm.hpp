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

// Real spherical harmonics in Cartesian form.
//
// Y_lm is evaluated as K_lm * Pbar_l^|m|(z) * Re/Im((x + iy)^|m|), where
// Pbar is the associated Legendre function with the (1 - z^2)^(|m|/2) factor
// removed. Every term is a polynomial in (x, y, z), so the same code runs on
// double, nn::Var and Eigen::AutoDiffScalar. Entries are ordered l-major,
// m = -l..l. Condon-Shortley phase is not applied.

#include "c3dm/tape.hpp"

#include <Eigen/Core>

#include <cmath>
#include <numbers>
#include <vector>

namespace c3dm::geom {

[[nodiscard]] constexpr int sh_count(int degree) noexcept { return (degree + 1) * (degree + 1); }
[[nodiscard]] constexpr int sh_index(int l, int m) noexcept { return l * l + l + m; }

/// Normalization constant K_lm (including the sqrt(2) for m != 0).
[[nodiscard]] inline double sh_normalization(int l, int m) {
  const int am = m < 0 ? -m : m;
  double ratio = 1.0;  // (l - |m|)! / (l + |m|)!
  for (int i = l - am + 1; i <= l + am; ++i) ratio /= static_cast<double>(i);
  const double k = std::sqrt((2.0 * l + 1.0) / (4.0 * std::numbers::pi) * ratio);
  return m == 0 ? k : std::sqrt(2.0) * k;
}

template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> real_sh(const Eigen::Matrix<Scalar, 3, 1>& p, int degree) {
  const int n = sh_count(degree);
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> out(n);
  const Scalar& x = p(0);
  const Scalar& y = p(1);
  const Scalar& z = p(2);

  // (x + iy)^m for m = 0..degree.
  std::vector<Scalar> re(static_cast<std::size_t>(degree + 1)), im(static_cast<std::size_t>(degree + 1));
  re[0] = Scalar(1.0);
  im[0] = Scalar(0.0);
  for (int m = 1; m <= degree; ++m) {
    re[m] = re[m - 1] * x - im[m - 1] * y;
    im[m] = re[m - 1] * y + im[m - 1] * x;
  }

  for (int m = 0; m <= degree; ++m) {
    // Pbar_m^m = (2m - 1)!!
    double dfact = 1.0;
    for (int i = 2 * m - 1; i > 1; i -= 2) dfact *= i;
    Scalar p_prev2(0.0);
    Scalar p_prev(dfact);
    for (int l = m; l <= degree; ++l) {
      Scalar p_l;
      if (l == m) {
        p_l = p_prev;
      } else if (l == m + 1) {
        p_l = z * (2.0 * m + 1.0) * p_prev;
        p_prev2 = p_prev;
        p_prev = p_l;
      } else {
        p_l = ((2.0 * l - 1.0) * z * p_prev - (l + m - 1.0) * p_prev2) / static_cast<double>(l - m);
        p_prev2 = p_prev;
        p_prev = p_l;
      }
      if (m == 0) {
        out(sh_index(l, 0)) = sh_normalization(l, 0) * p_l;
      } else {
        const double k = sh_normalization(l, m);
        out(sh_index(l, m)) = k * p_l * re[m];
        out(sh_index(l, -m)) = k * p_l * im[m];
      }
    }
  }
  return out;
}

/// Jacobian d real_sh / d p, sh_count(degree) x 3.
[[nodiscard]] Eigen::MatrixXd real_sh_jacobian(const Eigen::Vector3d& p, int degree);

}  // namespace c3dm::geom
