#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ppf_attitude {

enum class ErrorCode {
  NotAntiSymmetric,
  NotOrthonormal,
  SingularInput,
  NonUnitAxis,
  NonUnitQuaternion,
  HalfTurn,
  NonUnitVector,
  InvalidWeight,
  Collinear,
  RankDeficient,
  Degenerate,
  DegenerateVector,
  InvalidPpfConfig,
  EnvelopeViolated,
  NearUnstableSet,
  InvalidArgument,
  ConfigInvalid,
  IoError,
  EmptyWindow,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NotAntiSymmetric: return "NotAntiSymmetric";
    case ErrorCode::NotOrthonormal: return "NotOrthonormal";
    case ErrorCode::SingularInput: return "SingularInput";
    case ErrorCode::NonUnitAxis: return "NonUnitAxis";
    case ErrorCode::NonUnitQuaternion: return "NonUnitQuaternion";
    case ErrorCode::HalfTurn: return "HalfTurn";
    case ErrorCode::NonUnitVector: return "NonUnitVector";
    case ErrorCode::InvalidWeight: return "InvalidWeight";
    case ErrorCode::Collinear: return "Collinear";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::Degenerate: return "Degenerate";
    case ErrorCode::DegenerateVector: return "DegenerateVector";
    case ErrorCode::InvalidPpfConfig: return "InvalidPpfConfig";
    case ErrorCode::EnvelopeViolated: return "EnvelopeViolated";
    case ErrorCode::NearUnstableSet: return "NearUnstableSet";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::ConfigInvalid: return "ConfigInvalid";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::EmptyWindow: return "EmptyWindow";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace ppf_attitude
