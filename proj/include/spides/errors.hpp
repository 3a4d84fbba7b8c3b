#pragma once

#include <stdexcept>
#include <string>

namespace spides {

// Base of every error raised by the toolkit. The CLI maps the concrete
// subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid or inconsistent configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// File could not be opened, read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

// An input file or in-memory input violates its format or invariants.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Malformed text file; the message carries the offending line number.
class FormatError : public ValidationError {
 public:
  FormatError(const std::string& what, std::size_t line)
      : ValidationError("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Training or integration produced non-finite values.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, double last_finite_loss)
      : Error(what), last_finite_loss_(last_finite_loss) {}
  double last_finite_loss() const { return last_finite_loss_; }

 private:
  double last_finite_loss_;
};

}  // namespace spides
