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

namespace c3dm {

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::DegenerateInput: return "DegenerateInput";
    case ErrorCode::BehindCamera: return "BehindCamera";
    case ErrorCode::WrongCameraKind: return "WrongCameraKind";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::EmptyVisibleSet: return "EmptyVisibleSet";
    case ErrorCode::SingularSystem: return "SingularSystem";
    case ErrorCode::KTooLarge: return "KTooLarge";
    case ErrorCode::DegenerateCloud: return "DegenerateCloud";
    case ErrorCode::DegenerateDepth: return "DegenerateDepth";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::DegenerateRotations: return "DegenerateRotations";
    case ErrorCode::InfeasibleConstraint: return "InfeasibleConstraint";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

int exit_code(ErrorCode code) noexcept {
  return 10 + static_cast<int>(code);
}

}  // namespace c3dm
