#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dbo {

enum class ErrorKind {
  DimMismatch,
  NotSPD,
  NotSymmetric,
  BreakdownDetected,
  BadParameter,
  NotDoublyStochastic,
  NotContractive,
  NoConvergence,
  Divergence,
  MissingInput,
  ParseError,
  ValidationError,
  IoError,
};

std::string_view to_string(ErrorKind kind) noexcept;

/// Single exception type for the library; `kind()` carries the category so callers
/// (notably the CLI) can map failures onto exit codes without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace dbo
