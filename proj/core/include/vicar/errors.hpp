#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace vicar {

enum class ErrorCode {
  InvalidArgument,
  ParseError,
  EncodingError,
  RangeError,
  EmptyText,
  ASRUnavailable,
  ASRFailed,
  ProviderUnavailable,
  RateLimited,
  TemplateMissing,
  InvalidPrompt,
  DuplicateId,
  SchemaViolation,
  GroundingError,
  ConsistencyError,
  TaxonomyError,
  PipelineFailed,
  BudgetExceeded,
  Cancelled,
  InvalidDialogue,
  VersionConflict,
  IndexOutOfBounds,
  NothingToUndo,
  SpanInvalid,
  StaleVariation,
  NotFound,
  StorageFull,
  CorruptRecord,
  ExportRejected,
};

std::string_view to_string(ErrorCode code);
std::optional<ErrorCode> parse_error_code(std::string_view name);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }
  // Message without the "<Code>: " prefix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& message, std::size_t line, std::size_t byte_offset);

  std::size_t line() const noexcept { return line_; }
  std::size_t byte_offset() const noexcept { return byte_offset_; }

 private:
  std::size_t line_;
  std::size_t byte_offset_;
};

class RateLimitedError : public Error {
 public:
  RateLimitedError(const std::string& message, std::optional<double> retry_after_s);

  std::optional<double> retry_after() const noexcept { return retry_after_; }

 private:
  std::optional<double> retry_after_;
};

// Raised when structured output still fails validation after the repair budget.
class SchemaViolation : public Error {
 public:
  SchemaViolation(ErrorCode code, std::vector<std::string> errors, int attempts);

  const std::vector<std::string>& errors() const noexcept { return errors_; }
  int attempts() const noexcept { return attempts_; }

 private:
  std::vector<std::string> errors_;
  int attempts_;
};

class PipelineFailed : public Error {
 public:
  PipelineFailed(int step, ErrorCode cause, const std::string& message);

  int step() const noexcept { return step_; }
  ErrorCode cause() const noexcept { return cause_; }

 private:
  int step_;
  ErrorCode cause_;
};

}  // namespace vicar
