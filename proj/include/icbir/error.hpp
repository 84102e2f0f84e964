#pragma once

#include <stdexcept>
#include <string>

namespace icbir {

// Stable error categories.  Every user-facing failure carries one of these
// codes so scripts can match on the prefix instead of parsing prose.
enum class ErrorCode {
  Dimension,   // E_DIM      shape or size mismatch between operands
  Numeric,     // E_NUM      NaN/Inf encountered or produced
  State,       // E_STATE    operation out of order (e.g. backward before forward)
  Format,      // E_FORMAT   malformed file contents
  Config,      // E_CONFIG   invalid configuration value
  Input,       // E_INPUT    missing or empty input data
  Io,          // E_IO       filesystem read/write failure
  Degenerate,  // E_DEGEN    vector norm below the supported floor
  Parameter,   // E_PARAM    invalid runtime parameter combination
};

const char* error_code_name(ErrorCode code);

// Exception type used across the library.  what() is formatted as
// "[E_XXX] message" so the code survives into logs unchanged.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string("[") + error_code_name(code) + "] " + message),
        code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void raise(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::Dimension: return "E_DIM";
    case ErrorCode::Numeric: return "E_NUM";
    case ErrorCode::State: return "E_STATE";
    case ErrorCode::Format: return "E_FORMAT";
    case ErrorCode::Config: return "E_CONFIG";
    case ErrorCode::Input: return "E_INPUT";
    case ErrorCode::Io: return "E_IO";
    case ErrorCode::Degenerate: return "E_DEGEN";
    case ErrorCode::Parameter: return "E_PARAM";
  }
  return "E_UNKNOWN";
}

}  // namespace icbir
