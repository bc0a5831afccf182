#include "triage/error.hpp"

namespace triage {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::parse_error: return "parse_error";
    case ErrorCode::dangling_transition: return "dangling_transition";
    case ErrorCode::unknown_handler: return "unknown_handler";
    case ErrorCode::dead_transition: return "dead_transition";
    case ErrorCode::handler_failure: return "handler_failure";
    case ErrorCode::unknown_template: return "unknown_template";
    case ErrorCode::unresolved_placeholder: return "unresolved_placeholder";
    case ErrorCode::empty_input: return "empty_input";
    case ErrorCode::schema_violation: return "schema_violation";
    case ErrorCode::dimension_mismatch: return "dimension_mismatch";
    case ErrorCode::non_finite: return "non_finite";
    case ErrorCode::class_absent: return "class_absent";
    case ErrorCode::divergence: return "divergence";
    case ErrorCode::version_mismatch: return "version_mismatch";
    case ErrorCode::corrupt_file: return "corrupt_file";
    case ErrorCode::io_error: return "io_error";
    case ErrorCode::missing_embedding: return "missing_embedding";
    case ErrorCode::remote_failure: return "remote_failure";
    case ErrorCode::remote_timeout: return "remote_timeout";
    case ErrorCode::unmapped_reason: return "unmapped_reason";
    case ErrorCode::missing_timestamp: return "missing_timestamp";
    case ErrorCode::malformed_row: return "malformed_row";
    case ErrorCode::degenerate_dataset: return "degenerate_dataset";
    case ErrorCode::bad_envelope: return "bad_envelope";
    case ErrorCode::unknown_session: return "unknown_session";
  }
  return "unknown";
}

}  // namespace triage
