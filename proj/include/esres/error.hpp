#pragma once

#include <stdexcept>
#include <string>

namespace esres {

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed or unsupported audio container.
class DecodeError : public Error {
 public:
  using Error::Error;
};

// Dimension mismatch in a tensor or matrix operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration value or combination.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Broken on-disk file format (weights, caches).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Manifest schema, integrity, or range violations.
class DataError : public Error {
 public:
  using Error::Error;
};

// Misuse of the autodiff graph (double backward, detached root).
class GraphError : public Error {
 public:
  using Error::Error;
};

// Non-finite value where a finite one is required.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace esres
