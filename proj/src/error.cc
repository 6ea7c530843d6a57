/*
 * Copyright 2026 The llsim Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "llsim/error.h"

namespace llsim {

std::string_view ErrorCodeName(ErrorCode code) {
  switch (code) {
    case ErrorCode::kBadMagic: return "BadMagic";
    case ErrorCode::kTruncatedFile: return "TruncatedFile";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kDegenerateCalibration: return "DegenerateCalibration";
    case ErrorCode::kLayoutOverflow: return "LayoutOverflow";
    case ErrorCode::kLayoutMismatch: return "LayoutMismatch";
    case ErrorCode::kMissingSeed: return "MissingSeed";
    case ErrorCode::kCountMismatch: return "CountMismatch";
    case ErrorCode::kConfigError: return "ConfigError";
    case ErrorCode::kBudgetExceeded: return "BudgetExceeded";
    case ErrorCode::kIoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace llsim
