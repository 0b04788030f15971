// Copyright 2026 The qfc Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace qfc {

enum class ErrorKind {
  DimensionMismatch,
  InvalidArgument,
  NotPositive,
  TraceVanishing,
  NotHermitian,
  NotUnitary,
  PseudoUnitarityViolated,
  ChannelOverlap,
  ZeroIntensityJump,
  RateStepTooLarge,
  StepTooLarge,
  BlowUp,
  GridMismatch,
  NonFinite,
  Validation,
};

inline std::string_view to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::NotPositive: return "NotPositive";
    case ErrorKind::TraceVanishing: return "TraceVanishing";
    case ErrorKind::NotHermitian: return "NotHermitian";
    case ErrorKind::NotUnitary: return "NotUnitary";
    case ErrorKind::PseudoUnitarityViolated: return "PseudoUnitarityViolated";
    case ErrorKind::ChannelOverlap: return "ChannelOverlap";
    case ErrorKind::ZeroIntensityJump: return "ZeroIntensityJump";
    case ErrorKind::RateStepTooLarge: return "RateStepTooLarge";
    case ErrorKind::StepTooLarge: return "StepTooLarge";
    case ErrorKind::BlowUp: return "BlowUp";
    case ErrorKind::GridMismatch: return "GridMismatch";
    case ErrorKind::NonFinite: return "NonFinite";
    case ErrorKind::Validation: return "Validation";
  }
  return "Unknown";
}

/// Every failure raised by the library. Numerical failures (NotPositive,
/// BlowUp, RateStepTooLarge, StepTooLarge) usually mean dt is too large.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

  bool is_numerical() const noexcept {
    return kind_ == ErrorKind::NotPositive || kind_ == ErrorKind::TraceVanishing ||
           kind_ == ErrorKind::BlowUp || kind_ == ErrorKind::RateStepTooLarge ||
           kind_ == ErrorKind::StepTooLarge || kind_ == ErrorKind::NonFinite ||
           kind_ == ErrorKind::ZeroIntensityJump;
  }

 private:
  ErrorKind kind_;
};

}  // namespace qfc
