#pragma once

#include <stdexcept>
#include <string>

namespace fperr {

/// Base class for all analysis errors surfaced to the driver.
class Error : public std::runtime_error {
 public:
  explicit Error(std::string what) : std::runtime_error(std::move(what)) {}
};

/// A precondition of a numeric primitive failed on the given range
/// (zero-crossing denominator, log/sqrt of a negative range, ...).
class DomainViolation : public Error {
 public:
  explicit DomainViolation(std::string what) : Error(std::move(what)) {}
};

/// Expansion would exceed the configured hard ceiling.
class ExpressionTooLarge : public Error {
 public:
  explicit ExpressionTooLarge(std::string what) : Error(std::move(what)) {}
};

/// A point evaluation hit a singular operation.
class EvalDomain : public Error {
 public:
  explicit EvalDomain(std::string what) : Error(std::move(what)) {}
};

/// Requested a symbolic derivative that does not exist.
class NonDifferentiable : public Error {
 public:
  explicit NonDifferentiable(std::string what) : Error(std::move(what)) {}
};

/// Problem-definition file errors, with position information.
class ParseError : public Error {
 public:
  ParseError(std::string what, int line, int col)
      : Error("parse error at " + std::to_string(line) + ":" + std::to_string(col) + ": " + what),
        line(line),
        col(col) {}
  int line;
  int col;
};

}  // namespace fperr
