#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dgsr {

enum class Errc {
  IncompleteSequence,
  ExtraTokens,
  UnknownToken,
  ConstArityMismatch,
  AlreadyComplete,
  ExhaustedResampling,
  GroundTruthInvalidOnDomain,
  NonFiniteInput,
  MaskViolation,
  ShapeMismatch,
  VersionMismatch,
  ZeroVariance,
  EmptyQueue,
  NonFiniteGradient,
  NonFiniteLoss,
  IncompatibleCheckpoint,
  DivisionByZeroTarget,
  InvalidArgument,
  Io,
};

constexpr std::string_view errc_name(Errc c) {
  switch (c) {
    case Errc::IncompleteSequence: return "IncompleteSequence";
    case Errc::ExtraTokens: return "ExtraTokens";
    case Errc::UnknownToken: return "UnknownToken";
    case Errc::ConstArityMismatch: return "ConstArityMismatch";
    case Errc::AlreadyComplete: return "AlreadyComplete";
    case Errc::ExhaustedResampling: return "ExhaustedResampling";
    case Errc::GroundTruthInvalidOnDomain: return "GroundTruthInvalidOnDomain";
    case Errc::NonFiniteInput: return "NonFiniteInput";
    case Errc::MaskViolation: return "MaskViolation";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::VersionMismatch: return "VersionMismatch";
    case Errc::ZeroVariance: return "ZeroVariance";
    case Errc::EmptyQueue: return "EmptyQueue";
    case Errc::NonFiniteGradient: return "NonFiniteGradient";
    case Errc::NonFiniteLoss: return "NonFiniteLoss";
    case Errc::IncompatibleCheckpoint: return "IncompatibleCheckpoint";
    case Errc::DivisionByZeroTarget: return "DivisionByZeroTarget";
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::Io: return "Io";
  }
  return "Unknown";
}

/// Single exception type for the library; `code()` identifies the failure.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace dgsr
