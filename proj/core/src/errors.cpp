#include "vicar/errors.hpp"

namespace vicar {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::EncodingError: return "EncodingError";
    case ErrorCode::RangeError: return "RangeError";
    case ErrorCode::EmptyText: return "EmptyText";
    case ErrorCode::ASRUnavailable: return "ASRUnavailable";
    case ErrorCode::ASRFailed: return "ASRFailed";
    case ErrorCode::ProviderUnavailable: return "ProviderUnavailable";
    case ErrorCode::RateLimited: return "RateLimited";
    case ErrorCode::TemplateMissing: return "TemplateMissing";
    case ErrorCode::InvalidPrompt: return "InvalidPrompt";
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::SchemaViolation: return "SchemaViolation";
    case ErrorCode::GroundingError: return "GroundingError";
    case ErrorCode::ConsistencyError: return "ConsistencyError";
    case ErrorCode::TaxonomyError: return "TaxonomyError";
    case ErrorCode::PipelineFailed: return "PipelineFailed";
    case ErrorCode::BudgetExceeded: return "BudgetExceeded";
    case ErrorCode::Cancelled: return "Cancelled";
    case ErrorCode::InvalidDialogue: return "InvalidDialogue";
    case ErrorCode::VersionConflict: return "VersionConflict";
    case ErrorCode::IndexOutOfBounds: return "IndexOutOfBounds";
    case ErrorCode::NothingToUndo: return "NothingToUndo";
    case ErrorCode::SpanInvalid: return "SpanInvalid";
    case ErrorCode::StaleVariation: return "StaleVariation";
    case ErrorCode::NotFound: return "NotFound";
    case ErrorCode::StorageFull: return "StorageFull";
    case ErrorCode::CorruptRecord: return "CorruptRecord";
    case ErrorCode::ExportRejected: return "ExportRejected";
  }
  return "Unknown";
}

std::optional<ErrorCode> parse_error_code(std::string_view name) {
  for (int i = 0; i <= static_cast<int>(ErrorCode::ExportRejected); ++i) {
    const auto code = static_cast<ErrorCode>(i);
    if (to_string(code) == name) return code;
  }
  return std::nullopt;
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message),
      code_(code),
      detail_(message) {}

ParseError::ParseError(const std::string& message, std::size_t line, std::size_t byte_offset)
    : Error(ErrorCode::ParseError,
            message + " (line " + std::to_string(line) + ", byte " +
                std::to_string(byte_offset) + ")"),
      line_(line),
      byte_offset_(byte_offset) {}

RateLimitedError::RateLimitedError(const std::string& message, std::optional<double> retry_after_s)
    : Error(ErrorCode::RateLimited, message), retry_after_(retry_after_s) {}

namespace {
std::string join_errors(const std::vector<std::string>& errors) {
  std::string out;
  for (const auto& e : errors) {
    if (!out.empty()) out += "; ";
    out += e;
  }
  return out;
}
}  // namespace

SchemaViolation::SchemaViolation(ErrorCode code, std::vector<std::string> errors, int attempts)
    : Error(code, join_errors(errors) + " after " + std::to_string(attempts) + " attempt(s)"),
      errors_(std::move(errors)),
      attempts_(attempts) {}

PipelineFailed::PipelineFailed(int step, ErrorCode cause, const std::string& message)
    : Error(ErrorCode::PipelineFailed,
            "step " + std::to_string(step) + " failed (" + std::string(to_string(cause)) +
                "): " + message),
      step_(step),
      cause_(cause) {}

}  // namespace vicar
