#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace triage {

enum class ErrorCode {
  invalid_argument,
  parse_error,
  dangling_transition,
  unknown_handler,
  dead_transition,
  handler_failure,
  unknown_template,
  unresolved_placeholder,
  empty_input,
  schema_violation,
  dimension_mismatch,
  non_finite,
  class_absent,
  divergence,
  version_mismatch,
  corrupt_file,
  io_error,
  missing_embedding,
  remote_failure,
  remote_timeout,
  unmapped_reason,
  missing_timestamp,
  malformed_row,
  degenerate_dataset,
  bad_envelope,
  unknown_session,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Every failure raised by the engine carries a machine-readable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code), message_(message) {}

  ErrorCode code() const noexcept { return code_; }
  /// The message without the code prefix.
  const std::string& message() const noexcept { return message_; }

 private:
  ErrorCode code_;
  std::string message_;
};

}  // namespace triage
