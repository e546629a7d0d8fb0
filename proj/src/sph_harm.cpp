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

#include <unsupported/Eigen/AutoDiff>

namespace c3dm::geom {

Eigen::MatrixXd real_sh_jacobian(const Eigen::Vector3d& p, int degree) {
  using Dual = Eigen::AutoDiffScalar<Eigen::Vector3d>;
  Eigen::Matrix<Dual, 3, 1> pd;
  for (int i = 0; i < 3; ++i) pd(i) = Dual(p(i), 3, i);
  const Eigen::Matrix<Dual, Eigen::Dynamic, 1> y = real_sh<Dual>(pd, degree);
  Eigen::MatrixXd jac(y.size(), 3);
  for (Eigen::Index r = 0; r < y.size(); ++r) {
    if (y(r).derivatives().size() == 3) {
      jac.row(r) = y(r).derivatives().transpose();
    } else {
      jac.row(r).setZero();
    }
  }
  return jac;
}

}  // namespace c3dm::geom
