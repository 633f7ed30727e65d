#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dfc {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or truncated input file. `offset` is the byte position at
/// which the problem was detected.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : Error(what + " at offset " + std::to_string(offset)), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// Input that parsed but violates a documented invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Non-finite losses, degenerate geometry and similar numeric failures.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace dfc
