#include "error.hpp"

namespace dafe {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::usage: return "usage";
    case ErrorCode::data: return "data";
    case ErrorCode::format: return "format";
    case ErrorCode::dimension: return "dimension";
    case ErrorCode::parameter: return "parameter";
    case ErrorCode::contract: return "contract";
    case ErrorCode::config: return "config";
    case ErrorCode::io: return "io";
  }
  return "unknown";
}

}  // namespace dafe
