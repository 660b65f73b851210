#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace otce {

enum class ErrorCode {
  MalformedHeader,
  DimensionMismatch,
  NonFiniteValue,
  LabelOutOfRange,
  IoFailure,
  RaggedRow,
  NonNumericField,
  NegativeLabel,
  NumericalOverflow,
  TooLarge,
  LengthMismatch,
  DegenerateInput,
  EmptyInput,
  NonFiniteGradient,
  DivergenceDetected,
  MissingClass,
  InfeasibleSeparation,
  InvalidArgument,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedHeader: return "MalformedHeader";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::RaggedRow: return "RaggedRow";
    case ErrorCode::NonNumericField: return "NonNumericField";
    case ErrorCode::NegativeLabel: return "NegativeLabel";
    case ErrorCode::NumericalOverflow: return "NumericalOverflow";
    case ErrorCode::TooLarge: return "TooLarge";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::DegenerateInput: return "DegenerateInput";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::DivergenceDetected: return "DivergenceDetected";
    case ErrorCode::MissingClass: return "MissingClass";
    case ErrorCode::InfeasibleSeparation: return "InfeasibleSeparation";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

/// Every failure raised by the library carries a machine-readable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Validation failures map to CLI exit code 2, numerical ones to 3.
constexpr bool is_numerical(ErrorCode code) {
  return code == ErrorCode::NumericalOverflow || code == ErrorCode::NonFiniteGradient ||
         code == ErrorCode::DivergenceDetected;
}

}  // namespace otce
