#pragma once

#include <stdexcept>
#include <string>

namespace jmx {

enum class ErrorCode {
  InvalidKnots,
  DuplicateKnots,
  InvalidSpec,
  InvalidInterval,
  InvalidHorizon,
  MissingColumn,
  BadValue,
  EmptyTable,
  DuplicateSubject,
  UnmatchedSubject,
  SingularDesign,
  NonfiniteHazard,
  NonfiniteLogPosterior,
  EmptyRiskSet,
  FingerprintMismatch,
  VersionMismatch,
  ParseError,
  Usage,
};

const char* to_string(ErrorCode code);

/// Every failure raised by the library carries one of the codes above.
/// `exit_code()` maps it onto the CLI convention (2 usage, 3 data, 4 numeric).
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }
  int exit_code() const noexcept;

 private:
  ErrorCode code_;
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidKnots: return "invalid-knots";
    case ErrorCode::DuplicateKnots: return "duplicate-knots";
    case ErrorCode::InvalidSpec: return "invalid-spec";
    case ErrorCode::InvalidInterval: return "invalid-interval";
    case ErrorCode::InvalidHorizon: return "invalid-horizon";
    case ErrorCode::MissingColumn: return "missing-column";
    case ErrorCode::BadValue: return "bad-value";
    case ErrorCode::EmptyTable: return "empty-table";
    case ErrorCode::DuplicateSubject: return "duplicate-subject";
    case ErrorCode::UnmatchedSubject: return "unmatched-subject";
    case ErrorCode::SingularDesign: return "singular-design";
    case ErrorCode::NonfiniteHazard: return "nonfinite-hazard";
    case ErrorCode::NonfiniteLogPosterior: return "nonfinite-log-posterior";
    case ErrorCode::EmptyRiskSet: return "empty-risk-set";
    case ErrorCode::FingerprintMismatch: return "fingerprint-mismatch";
    case ErrorCode::VersionMismatch: return "version-mismatch";
    case ErrorCode::ParseError: return "parse-error";
    case ErrorCode::Usage: return "usage";
  }
  return "error";
}

inline int Error::exit_code() const noexcept {
  switch (code_) {
    case ErrorCode::Usage:
    case ErrorCode::InvalidSpec:
      return 2;
    case ErrorCode::SingularDesign:
    case ErrorCode::NonfiniteHazard:
    case ErrorCode::NonfiniteLogPosterior:
      return 4;
    default:
      return 3;
  }
}

}  // namespace jmx
