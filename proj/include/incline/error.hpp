#pragma once

#include <stdexcept>
#include <string>

namespace incline {

// Every failure in the library throws Error with a code that tests can match
// on and a human-readable message that names the offending operation.
enum class ErrorCode {
  DimensionMismatch,
  NotPositiveDefinite,
  DegenerateData,
  InvalidConfig,
  TokenOutOfRange,
  SequenceTooLong,
  InvalidDataset,
  InvalidSpec,
  NotALanguageAToken,
  SiteMismatch,
  MissingSiteMatrix,
  MissingSiteVector,
  DimMismatch,
  ItemMismatch,
  DegenerateLabels,
  ParseError,
  FormatVersionMismatch,
  Io,
  InvalidArgument,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

inline const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::NotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorCode::DegenerateData: return "DegenerateData";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::TokenOutOfRange: return "TokenOutOfRange";
    case ErrorCode::SequenceTooLong: return "SequenceTooLong";
    case ErrorCode::InvalidDataset: return "InvalidDataset";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::NotALanguageAToken: return "NotALanguageAToken";
    case ErrorCode::SiteMismatch: return "SiteMismatch";
    case ErrorCode::MissingSiteMatrix: return "MissingSiteMatrix";
    case ErrorCode::MissingSiteVector: return "MissingSiteVector";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::ItemMismatch: return "ItemMismatch";
    case ErrorCode::DegenerateLabels: return "DegenerateLabels";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::FormatVersionMismatch: return "FormatVersionMismatch";
    case ErrorCode::Io: return "Io";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
  }
  return "UnknownError";
}

}  // namespace incline
