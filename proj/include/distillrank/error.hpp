#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace distillrank {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input; `line()` is 1-based, 0 when not tied to a line.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line = 0)
      : Error(line ? what + " (line " + std::to_string(line) + ")" : what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Index was built by a model whose parameters have since changed.
class StaleIndexError : public Error {
 public:
  using Error::Error;
};

/// Retryable failure talking to an external scorer.
class TransportError : public Error {
 public:
  using Error::Error;
};

class DegenerateResponseError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace distillrank
