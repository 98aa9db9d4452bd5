#pragma once

#include <stdexcept>
#include <string>

namespace tnet {

enum class ErrorCategory {
  argument,
  dimension,
  state,
  config,
  format,
  io,
  preprocessing,
};

inline const char* to_string(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::argument: return "argument";
    case ErrorCategory::dimension: return "dimension";
    case ErrorCategory::state: return "state";
    case ErrorCategory::config: return "config";
    case ErrorCategory::format: return "format";
    case ErrorCategory::io: return "io";
    case ErrorCategory::preprocessing: return "preprocessing";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& message)
      : std::runtime_error(message), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

[[noreturn]] inline void fail(ErrorCategory c, const std::string& message) {
  throw Error(c, message);
}

}  // namespace tnet
