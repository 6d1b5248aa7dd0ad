#pragma once

#include <stdexcept>
#include <string>

namespace alliance {

enum class ErrorKind {
  Precondition,
  Config,
  Environment,
  Io,
  Parse,
  Provider,
  ReplayMiss,
  Template,
  Assembly,
  ZeroVector,
};

/// Every fatal condition raised by the library. Non-fatal outcomes
/// (degraded stages, failed verdicts) are reported through return values.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace alliance
