#pragma once

#include <stdexcept>
#include <string>

namespace dafe {

enum class ErrorCode {
  usage,      // bad CLI/API invocation
  data,       // dataset/batch does not satisfy an operation's preconditions
  format,     // malformed file (bad magic, version, truncation)
  dimension,  // tensor shapes do not chain
  parameter,  // invalid numeric parameter (probability, margin, ...)
  contract,   // caller violated a documented contract
  config,     // bad or unknown configuration key/value
  io,         // filesystem failure
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void raise(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace dafe
