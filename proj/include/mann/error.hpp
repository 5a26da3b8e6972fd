// Copyright 2026 The mannflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mann {

enum class ErrorCode {
  kInvalidInput,
  kEmptyMemory,
  kCapacity,
  kContractViolation,
  kCalibrationFailed,
  kParse,
  kEncoding,
  kDivergence,
  kFormat,
  kIo,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidInput: return "invalid input";
    case ErrorCode::kEmptyMemory: return "empty memory";
    case ErrorCode::kCapacity: return "capacity exceeded";
    case ErrorCode::kContractViolation: return "contract violation";
    case ErrorCode::kCalibrationFailed: return "calibration failed";
    case ErrorCode::kParse: return "parse error";
    case ErrorCode::kEncoding: return "encoding error";
    case ErrorCode::kDivergence: return "divergence";
    case ErrorCode::kFormat: return "format error";
    case ErrorCode::kIo: return "io error";
  }
  return "unknown";
}

/// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace mann
