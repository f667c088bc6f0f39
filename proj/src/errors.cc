#include "morseflow/errors.h"

namespace morseflow {

const char* ErrorName(ErrorCode code) {
  switch (code) {
    case ErrorCode::kNotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorCode::kNoDecay: return "NoDecay";
    case ErrorCode::kCouplingTooLarge: return "CouplingTooLarge";
    case ErrorCode::kAsymmetricCoupling: return "AsymmetricCoupling";
    case ErrorCode::kGridMismatch: return "GridMismatch";
    case ErrorCode::kBlowup: return "Blowup";
    case ErrorCode::kStepTooLarge: return "StepTooLarge";
    case ErrorCode::kNonHyperbolic: return "NonHyperbolic";
    case ErrorCode::kLeftBlock: return "LeftBlock";
    case ErrorCode::kDimChange: return "DimChange";
    case ErrorCode::kIllConditioned: return "IllConditioned";
    case ErrorCode::kEpsTooLarge: return "EpsTooLarge";
    case ErrorCode::kNoCoercivity: return "NoCoercivity";
    case ErrorCode::kInadmissibleE: return "InadmissibleE";
    case ErrorCode::kBoundsViolated: return "BoundsViolated";
    case ErrorCode::kNewtonStall: return "NewtonStall";
    case ErrorCode::kNotContracting: return "NotContracting";
    case ErrorCode::kFiberNotContracting: return "FiberNotContracting";
    case ErrorCode::kInsufficientSamples: return "InsufficientSamples";
    case ErrorCode::kLipschitzUnreachable: return "LipschitzUnreachable";
    case ErrorCode::kNotTransversal: return "NotTransversal";
    case ErrorCode::kNoEntry: return "NoEntry";
    case ErrorCode::kContractionFailed: return "ContractionFailed";
    case ErrorCode::kEtaBallViolated: return "EtaBallViolated";
    case ErrorCode::kAmbiguousMatching: return "AmbiguousMatching";
    case ErrorCode::kConfigError: return "ConfigError";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

}  // namespace morseflow
