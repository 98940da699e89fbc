#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace pcsep {

// Base of every error raised by the library. The CLI maps the subclasses
// onto its exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor or array shapes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Violated calling contract (backward on a non-scalar, empty tape, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

class EmptyInputError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced by a forward or backward pass, or a degenerate numeric input.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Missing or insufficient dataset content.
class DataError : public Error {
 public:
  using Error::Error;
};

// Malformed file content. offset is the byte position where parsing stopped.
class ParseError : public DataError {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : DataError(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace pcsep
