#pragma once

#include <stdexcept>
#include <string>

namespace snid {

/// Base class of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid input: bad dimensions, violated preconditions, malformed configs.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Malformed text file. Carries the 1-based line number (0 when unknown).
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// A numerical stage could not produce a result (rank deficiency,
/// singular systems, divergence, incomplete recovery).
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace snid
