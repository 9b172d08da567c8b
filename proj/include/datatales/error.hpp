#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace datatales {

enum class ErrorCode {
  IoError,
  FormatError,
  TypeError,
  UnknownField,
  InvalidChart,
  InvalidAnnotation,
  EmptyAnnotation,
  DataTooLarge,
  EmptyNarrative,
  InvalidParams,
  FixtureMiss,
  TransportError,
  ProviderError,
  EmptyResponse,
  UnknownChart,
  UnknownDataset,
  UnknownSession,
  UnknownStory,
  DuplicateId,
  RangeOutOfBounds,
  VersionError,
  SchemaError,
  BindError,
  BadRequest,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::FormatError: return "FormatError";
    case ErrorCode::TypeError: return "TypeError";
    case ErrorCode::UnknownField: return "UnknownField";
    case ErrorCode::InvalidChart: return "InvalidChart";
    case ErrorCode::InvalidAnnotation: return "InvalidAnnotation";
    case ErrorCode::EmptyAnnotation: return "EmptyAnnotation";
    case ErrorCode::DataTooLarge: return "DataTooLarge";
    case ErrorCode::EmptyNarrative: return "EmptyNarrative";
    case ErrorCode::InvalidParams: return "InvalidParams";
    case ErrorCode::FixtureMiss: return "FixtureMiss";
    case ErrorCode::TransportError: return "TransportError";
    case ErrorCode::ProviderError: return "ProviderError";
    case ErrorCode::EmptyResponse: return "EmptyResponse";
    case ErrorCode::UnknownChart: return "UnknownChart";
    case ErrorCode::UnknownDataset: return "UnknownDataset";
    case ErrorCode::UnknownSession: return "UnknownSession";
    case ErrorCode::UnknownStory: return "UnknownStory";
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::RangeOutOfBounds: return "RangeOutOfBounds";
    case ErrorCode::VersionError: return "VersionError";
    case ErrorCode::SchemaError: return "SchemaError";
    case ErrorCode::BindError: return "BindError";
    case ErrorCode::BadRequest: return "BadRequest";
  }
  return "Unknown";
}

/// Single exception type for the library. `stage` is set by the generation
/// pipeline (compose, complete, title, link, verify, store) and empty elsewhere.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, std::string stage = {})
      : std::runtime_error(message), code_(code), stage_(std::move(stage)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& stage() const noexcept { return stage_; }

  Error with_stage(std::string stage) const { return Error(code_, what(), std::move(stage)); }

 private:
  ErrorCode code_;
  std::string stage_;
};

}  // namespace datatales
