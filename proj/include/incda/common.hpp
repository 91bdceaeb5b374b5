/*
 * Copyright 2026 The incda Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 *
 */

#ifndef INCDA_COMMON_HPP_
#define INCDA_COMMON_HPP_

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

#include <Eigen/Dense>

namespace incda {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

enum class ErrorCode {
  DimensionMismatch,
  NotPositiveDefinite,
  IndexOutOfRange,
  SingularInnovation,
  InsufficientData,
  EmptyObservation,
  LineSearchFailure,
  StaleCache,
  OddDim,
  ShapeMismatch,
  NonFiniteLoss,
  InvalidConfig,
  IoError,
  EmptyResults,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::NotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::SingularInnovation: return "SingularInnovation";
    case ErrorCode::InsufficientData: return "InsufficientData";
    case ErrorCode::EmptyObservation: return "EmptyObservation";
    case ErrorCode::LineSearchFailure: return "LineSearchFailure";
    case ErrorCode::StaleCache: return "StaleCache";
    case ErrorCode::OddDim: return "OddDim";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::EmptyResults: return "EmptyResults";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Raised by factorizations; carries the offending pivot.
class NotPositiveDefinite : public Error {
 public:
  NotPositiveDefinite(Index pivot, double value)
      : Error(ErrorCode::NotPositiveDefinite,
              "pivot " + std::to_string(pivot) + " = " + std::to_string(value)),
        pivot_(pivot) {}

  Index pivot() const noexcept { return pivot_; }

 private:
  Index pivot_;
};

inline void require_dim(Index got, Index expected, const char* what) {
  if (got != expected) {
    throw Error(ErrorCode::DimensionMismatch,
                std::string(what) + ": expected " + std::to_string(expected) +
                    ", got " + std::to_string(got));
  }
}

}  // namespace incda

#endif  // INCDA_COMMON_HPP_
