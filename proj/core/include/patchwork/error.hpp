// Copyright 2026 The Patchwork Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace patchwork {

enum class ErrorCode {
  kInvalidArgument,
  kIo,
  kMalformedHeader,
  kShapeMismatch,
  kNonFinite,
  kTokenization,
  kSequenceTooLong,
  kDegenerateVector,
  kEdgeOutsideUniverse,
  kLengthMismatch,
  kIncompatibleCircuits,
  kNotSingleCorruption,
  kUniverseTooLarge,
  kInfeasibleFixture,
  kConfig,
};

/// Base exception for everything the library reports. Callers that need to
/// distinguish failure classes switch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Stable machine-readable name, used in CLI error records.
inline std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kMalformedHeader: return "malformed_header";
    case ErrorCode::kShapeMismatch: return "shape_mismatch";
    case ErrorCode::kNonFinite: return "non_finite";
    case ErrorCode::kTokenization: return "tokenization";
    case ErrorCode::kSequenceTooLong: return "sequence_too_long";
    case ErrorCode::kDegenerateVector: return "degenerate_vector";
    case ErrorCode::kEdgeOutsideUniverse: return "edge_outside_universe";
    case ErrorCode::kLengthMismatch: return "length_mismatch";
    case ErrorCode::kIncompatibleCircuits: return "incompatible_circuits";
    case ErrorCode::kNotSingleCorruption: return "not_single_corruption";
    case ErrorCode::kUniverseTooLarge: return "universe_too_large";
    case ErrorCode::kInfeasibleFixture: return "infeasible_fixture";
    case ErrorCode::kConfig: return "config";
  }
  return "unknown";
}

}  // namespace patchwork
