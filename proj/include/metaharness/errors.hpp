#pragma once

#include <stdexcept>
#include <string>

namespace metaharness {

// Every failure mode the library distinguishes. Callers branch on the code,
// not on message text.
enum class ErrorCode {
  // answers / grading
  EmptyAnswer,
  UnparseableNumeric,
  MissingGold,
  // elicitation
  MissingToolCall,
  MissingField,
  OutOfRange,
  BudgetExceeded,
  TooFewAttempts,
  ElicitationExhausted,
  // backend
  AuthMissing,
  Timeout,
  TransportError,
  RateLimited,
  // metrics / calibration / controller
  DegenerateLabels,
  TooFew,
  NoMultiAttempt,
  TooFewAnchors,
  AllCandidatesFailed,
  NoConvergence,
  ConstantFeature,
  // diagnosis
  WrongRowCount,
  // artifacts / files
  VersionMismatch,
  CorruptArtifact,
  ParseError,
  LogMismatch,
  // misc
  InvalidArgument,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace metaharness
