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

// Finite-difference gradient suite over the loss functions and the network
// building blocks, shared by the command-line tool and the acceptance run.

#include <cstdint>
#include <string>
#include <vector>

namespace c3dm::checks {

struct GradCheckRow {
  std::string name;
  std::string group;  // "losses", "geom" or "nn"
  int points = 0;
  double max_rel_error = 0.0;
  double tolerance = 1e-4;
  bool pass = false;
};

struct GradCheckOptions {
  /// Row name or group name; empty runs everything.
  std::string scope;
  int points = 100;
  /// Perturbs the analytic gradient of the first selected row (negative control).
  bool corrupt_one = false;
  std::uint64_t seed = 1;
  double tolerance = 1e-4;
};

[[nodiscard]] std::vector<std::string> gradcheck_names();

/// Throws InvalidSpec when the scope matches no row.
[[nodiscard]] std::vector<GradCheckRow> run_gradcheck(const GradCheckOptions& opt = {});

}  // namespace c3dm::checks
