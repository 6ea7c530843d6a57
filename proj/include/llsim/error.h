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

#ifndef LLSIM_ERROR_H_
#define LLSIM_ERROR_H_

#include <stdexcept>
#include <string>
#include <string_view>

namespace llsim {

enum class ErrorCode {
  kBadMagic,
  kTruncatedFile,
  kDimensionMismatch,
  kShapeMismatch,
  kDegenerateCalibration,
  kLayoutOverflow,
  kLayoutMismatch,
  kMissingSeed,
  kCountMismatch,
  kConfigError,
  kBudgetExceeded,
  kIoError,
};

std::string_view ErrorCodeName(ErrorCode code);

// All recoverable failures in the library are reported through this type.
// The CLI maps kConfigError to exit code 2 and everything else to 3.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(ErrorCodeName(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace llsim

#endif  // LLSIM_ERROR_H_
