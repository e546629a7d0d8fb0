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

#include <stdexcept>
#include <string>

namespace c3dm {

/// Error classes surfaced by the library. The CLI maps each one to its own
/// process exit code (see exit_code()).
enum class ErrorCode {
  DegenerateInput,
  BehindCamera,
  WrongCameraKind,
  DimMismatch,
  EmptyVisibleSet,
  SingularSystem,
  KTooLarge,
  DegenerateCloud,
  DegenerateDepth,
  InvalidSpec,
  DegenerateRotations,
  InfeasibleConstraint,
  NonFiniteGradient,
  IoError,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  [[nodiscard]] ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[nodiscard]] const char* to_string(ErrorCode code) noexcept;

/// 0 is success, 1 is an unclassified failure and 2 is a usage error.
[[nodiscard]] int exit_code(ErrorCode code) noexcept;

}  // namespace c3dm
