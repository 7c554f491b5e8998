#pragma once

#include <stdexcept>
#include <string>

namespace hiergen {

// Numeric values are shared with the C API status codes in hiergen.h.
enum class ErrorCode : int {
  kInvalidArgument = 1,
  kInvalidLabel = 2,
  kShapeMismatch = 3,
  kOutOfRange = 4,
  kIo = 5,
  kParse = 6,
  kConfigMismatch = 7,
  kNonFinite = 8,
  kNotLoaded = 9,
  kDiverged = 10,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, std::string field_path = {})
      : std::runtime_error(message), code_(code), field_path_(std::move(field_path)) {}

  ErrorCode code() const noexcept { return code_; }
  // JSON-style path of the offending field, e.g. "layout.boxes[1].label".
  const std::string& field_path() const noexcept { return field_path_; }

 private:
  ErrorCode code_;
  std::string field_path_;
};

}  // namespace hiergen
