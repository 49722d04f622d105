// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace potflow {

enum class ErrorCode {
  UnboundedDomain,
  EmptyDomain,
  OpenLoop,
  EvaluationFailed,
  InitFailure,
  OtNonConvergence,
  ConfigError,
  FrameError,
  CrcError,
};

inline const char* to_string(ErrorCode c) {
  switch (c) {
    case ErrorCode::UnboundedDomain: return "UnboundedDomain";
    case ErrorCode::EmptyDomain: return "EmptyDomain";
    case ErrorCode::OpenLoop: return "OpenLoop";
    case ErrorCode::EvaluationFailed: return "EvaluationFailed";
    case ErrorCode::InitFailure: return "InitFailure";
    case ErrorCode::OtNonConvergence: return "OtNonConvergence";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::FrameError: return "FrameError";
    case ErrorCode::CrcError: return "CrcError";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace potflow
