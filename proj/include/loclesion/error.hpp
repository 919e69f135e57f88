#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace loclesion {

enum class ErrorCode {
  // stimuli
  MissingFile,
  SchemaError,
  EmptyCondition,
  TemplateError,
  // runtime
  ConfigError,
  SequenceTooLong,
  // localizer
  EmptySequence,
  InsufficientSamples,
  DimMismatch,
  ConditionMismatch,
  EmptySelection,
  // harness
  GoldOutOfRange,
  TooManyOptions,
  EmptyBenchmark,
  MismatchedRuns,
  // analysis
  MixedKeys,
  LengthMismatch,
  TooFewPairs,
  AlignmentError,
  // artifacts
  IoError,
  BadMagic,
  UnsupportedVersion,
  TruncatedPayload,
  InvariantViolation,
  // cli
  UsageError,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingFile: return "MissingFile";
    case ErrorCode::SchemaError: return "SchemaError";
    case ErrorCode::EmptyCondition: return "EmptyCondition";
    case ErrorCode::TemplateError: return "TemplateError";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::SequenceTooLong: return "SequenceTooLong";
    case ErrorCode::EmptySequence: return "EmptySequence";
    case ErrorCode::InsufficientSamples: return "InsufficientSamples";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::ConditionMismatch: return "ConditionMismatch";
    case ErrorCode::EmptySelection: return "EmptySelection";
    case ErrorCode::GoldOutOfRange: return "GoldOutOfRange";
    case ErrorCode::TooManyOptions: return "TooManyOptions";
    case ErrorCode::EmptyBenchmark: return "EmptyBenchmark";
    case ErrorCode::MismatchedRuns: return "MismatchedRuns";
    case ErrorCode::MixedKeys: return "MixedKeys";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::TooFewPairs: return "TooFewPairs";
    case ErrorCode::AlignmentError: return "AlignmentError";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::UnsupportedVersion: return "UnsupportedVersion";
    case ErrorCode::TruncatedPayload: return "TruncatedPayload";
    case ErrorCode::InvariantViolation: return "InvariantViolation";
    case ErrorCode::UsageError: return "UsageError";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above so
/// callers (and the CLI exit-code mapping) can branch on it.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace loclesion
