#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

namespace xaisvc {

enum class ErrorCode {
  // metrics
  ZeroDenominator,
  InsufficientSamples,
  EmptyRange,
  EmptyInput,
  NoCandidates,
  // saliency / images
  NegativeScore,
  InvalidFraction,
  DimensionMismatch,
  ModelFailure,
  InvalidArgument,
  // coordination
  DuplicateId,
  InvalidId,
  InvalidKind,
  UnknownService,
  KindMismatch,
  MissingRole,
  UnknownSheet,
  UnknownTicket,
  UnknownPipeline,
  UnknownDataset,
  UnknownResult,
  ServiceUnavailable,
  DownstreamError,
  Conflict,
  InvalidTransition,
  // provenance
  MissingService,
  NotRerunnable,
  IncomparableShapes,
  SchemaViolation,
  DanglingReference,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ZeroDenominator: return "ZeroDenominator";
    case ErrorCode::InsufficientSamples: return "InsufficientSamples";
    case ErrorCode::EmptyRange: return "EmptyRange";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::NoCandidates: return "NoCandidates";
    case ErrorCode::NegativeScore: return "NegativeScore";
    case ErrorCode::InvalidFraction: return "InvalidFraction";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::ModelFailure: return "ModelFailure";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::InvalidId: return "InvalidId";
    case ErrorCode::InvalidKind: return "InvalidKind";
    case ErrorCode::UnknownService: return "UnknownService";
    case ErrorCode::KindMismatch: return "KindMismatch";
    case ErrorCode::MissingRole: return "MissingRole";
    case ErrorCode::UnknownSheet: return "UnknownSheet";
    case ErrorCode::UnknownTicket: return "UnknownTicket";
    case ErrorCode::UnknownPipeline: return "UnknownPipeline";
    case ErrorCode::UnknownDataset: return "UnknownDataset";
    case ErrorCode::UnknownResult: return "UnknownResult";
    case ErrorCode::ServiceUnavailable: return "ServiceUnavailable";
    case ErrorCode::DownstreamError: return "DownstreamError";
    case ErrorCode::Conflict: return "Conflict";
    case ErrorCode::InvalidTransition: return "InvalidTransition";
    case ErrorCode::MissingService: return "MissingService";
    case ErrorCode::NotRerunnable: return "NotRerunnable";
    case ErrorCode::IncomparableShapes: return "IncomparableShapes";
    case ErrorCode::SchemaViolation: return "SchemaViolation";
    case ErrorCode::DanglingReference: return "DanglingReference";
  }
  return "Unknown";
}

/// HTTP status used when an error crosses the open API.
constexpr int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::UnknownService:
    case ErrorCode::UnknownSheet:
    case ErrorCode::UnknownTicket:
    case ErrorCode::UnknownPipeline:
    case ErrorCode::UnknownDataset:
    case ErrorCode::UnknownResult:
      return 404;
    case ErrorCode::DuplicateId:
    case ErrorCode::Conflict:
    case ErrorCode::NotRerunnable:
    case ErrorCode::MissingService:
      return 409;
    case ErrorCode::KindMismatch:
    case ErrorCode::MissingRole:
    case ErrorCode::IncomparableShapes:
    case ErrorCode::InsufficientSamples:
      return 422;
    case ErrorCode::ServiceUnavailable:
    case ErrorCode::DownstreamError:
    case ErrorCode::ModelFailure:
      return 502;
    case ErrorCode::InvalidTransition:
    case ErrorCode::DanglingReference:
      return 500;
    default:
      return 400;
  }
}

/// Every failure in the library is an Error carrying a machine-readable code
/// and optional structured context (index, ids, line numbers).
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, nlohmann::json details = nlohmann::json::object())
      : std::runtime_error(message), code_(code), details_(std::move(details)) {}

  ErrorCode code() const noexcept { return code_; }
  const nlohmann::json& details() const noexcept { return details_; }

  nlohmann::json to_json() const {
    nlohmann::json body;
    body["code"] = std::string(to_string(code_));
    body["message"] = what();
    if (!details_.empty()) body["details"] = details_;
    return nlohmann::json{{"error", body}};
  }

 private:
  ErrorCode code_;
  nlohmann::json details_;
};

inline std::optional<ErrorCode> error_code_from_string(std::string_view name) {
  for (int i = 0; i <= static_cast<int>(ErrorCode::DanglingReference); ++i) {
    auto code = static_cast<ErrorCode>(i);
    if (to_string(code) == name) return code;
  }
  return std::nullopt;
}

}  // namespace xaisvc
