#pragma once

#include <stdexcept>
#include <string>

namespace morseflow {

enum class ErrorCode {
  kNotPositiveDefinite,
  kNoDecay,
  kCouplingTooLarge,
  kAsymmetricCoupling,
  kGridMismatch,
  kBlowup,
  kStepTooLarge,
  kNonHyperbolic,
  kLeftBlock,
  kDimChange,
  kIllConditioned,
  kEpsTooLarge,
  kNoCoercivity,
  kInadmissibleE,
  kBoundsViolated,
  kNewtonStall,
  kNotContracting,
  kFiberNotContracting,
  kInsufficientSamples,
  kLipschitzUnreachable,
  kNotTransversal,
  kNoEntry,
  kContractionFailed,
  kEtaBallViolated,
  kAmbiguousMatching,
  kConfigError,
  kInvalidArgument,
};

const char* ErrorName(ErrorCode code);

/// Every failure raised by the library carries one of the codes above so
/// callers (and the CLI exit-code mapping) can branch on the kind.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail)
      : std::runtime_error(std::string(ErrorName(code)) + ": " + detail),
        code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace morseflow
