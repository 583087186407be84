#pragma once

#include <stdexcept>
#include <string>

namespace cryomux {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad input: a violated precondition, malformed config or program.
/// `line` is 1-based and zero when the error has no source location.
class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what, int line = 0)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  int line() const noexcept { return line_; }

 private:
  int line_;
};

/// An iterative solver failed to meet its target. `residual` is the final
/// misfit in the solver's own units.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, double residual)
      : Error(what + " (residual " + std::to_string(residual) + ")"), residual_(residual) {}
  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

}  // namespace cryomux
