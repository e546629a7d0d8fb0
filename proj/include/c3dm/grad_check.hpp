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

#include "c3dm/tape.hpp"

#include <Eigen/Core>

#include <functional>

namespace c3dm::nn {

/// Central-difference gradient of f at x with step h.
[[nodiscard]] Eigen::VectorXd numeric_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                                               const Eigen::VectorXd& x, double h);

/// max_i |a_i - n_i| / max(1, |a_i|, |n_i|).
[[nodiscard]] double max_relative_error(const Eigen::VectorXd& analytic, const Eigen::VectorXd& numeric);

/// Compares a supplied analytic gradient against central differences of f.
[[nodiscard]] double grad_check(const std::function<double(const Eigen::VectorXd&)>& f,
                                const Eigen::VectorXd& analytic, const Eigen::VectorXd& x, double h = 1e-5);

struct GradCheckResult {
  double max_rel_error = 0.0;
  double value = 0.0;
  Eigen::VectorXd analytic;
  Eigen::VectorXd numeric;
};

/// Tape gradient versus central differences for a scalar function written
/// once for both scalar types: fn(const Eigen::Matrix<T, Dynamic, 1>&) -> T.
template <typename Fn>
GradCheckResult check_gradient(Fn&& fn, const Eigen::VectorXd& x, double h = 1e-5) {
  GradCheckResult r;
  {
    TapeScope scope;
    Eigen::Matrix<Var, Eigen::Dynamic, 1> xv = make_leaves<Eigen::Dynamic, 1>(x);
    const Var y = fn(xv);
    std::vector<Var> reg(xv.data(), xv.data() + xv.size());
    const GradientBundle g = backward(y, reg);
    r.value = g.value;
    r.analytic = g.gradient;
  }
  r.numeric = numeric_gradient([&fn](const Eigen::VectorXd& p) { return static_cast<double>(fn(p)); }, x, h);
  r.max_rel_error = max_relative_error(r.analytic, r.numeric);
  return r;
}

}  // namespace c3dm::nn
