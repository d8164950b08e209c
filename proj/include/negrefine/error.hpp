#pragma once

#include <stdexcept>
#include <string>

namespace negrefine {

enum class ErrorCode {
  invalid_argument,
  io_failure,
  malformed_header,
  dimension_mismatch,
  duplicate_id,
  non_finite_value,
  degenerate_row,
  checksum_mismatch,
  empty_input,
  empty_pool,
  transport,
  protocol_violation,
  unparseable,
  config_digest_mismatch,
  partial_results,
  stage_failure,
};

const char* to_string(ErrorCode code) noexcept;

// Single exception type for the engine; the code drives the C API status and
// the CLI exit code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

}  // namespace negrefine
