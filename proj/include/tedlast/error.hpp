#pragma once

#include <stdexcept>
#include <string>

namespace tedlast {

/// Failure categories. The CLI maps them onto its exit codes.
enum class ErrorKind {
  kUsage,      // bad argument or configuration (exit 2)
  kIntegrity,  // malformed, inconsistent or mismatched data (exit 3)
  kInternal,   // anything else (exit 4)
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline Error usage_error(const std::string& what) {
  return Error(ErrorKind::kUsage, what);
}

inline Error integrity_error(const std::string& what) {
  return Error(ErrorKind::kIntegrity, what);
}

inline int exit_code(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::kUsage:
      return 2;
    case ErrorKind::kIntegrity:
      return 3;
    case ErrorKind::kInternal:
      break;
  }
  return 4;
}

}  // namespace tedlast
