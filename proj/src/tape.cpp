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
#include "c3dm/tape.hpp"

namespace c3dm::nn {

std::vector<double> Tape::adjoints(std::int32_t output, double seed) const {
  std::vector<double> adj(nodes_.size(), 0.0);
  if (output < 0) return adj;
  adj[static_cast<std::size_t>(output)] = seed;
  for (std::int32_t i = output; i >= 0; --i) {
    const double a = adj[static_cast<std::size_t>(i)];
    if (a == 0.0) continue;
    const Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.lhs >= 0) adj[static_cast<std::size_t>(n.lhs)] += a * n.d_lhs;
    if (n.rhs >= 0) adj[static_cast<std::size_t>(n.rhs)] += a * n.d_rhs;
  }
  return adj;
}

Tape& tape() {
  thread_local Tape t;
  return t;
}

GradientBundle backward(const Var& loss, std::span<const Var> registered, double seed) {
  GradientBundle out;
  out.value = loss.value();
  out.gradient = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(registered.size()));
  if (loss.is_constant()) return out;
  const std::vector<double> adj = tape().adjoints(loss.index(), seed);
  for (std::size_t i = 0; i < registered.size(); ++i) {
    const std::int32_t idx = registered[i].index();
    if (idx >= 0) out.gradient(static_cast<Eigen::Index>(i)) = adj[static_cast<std::size_t>(idx)];
  }
  return out;
}

}  // namespace c3dm::nn
