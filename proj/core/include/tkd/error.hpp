#pragma once

#include <stdexcept>
#include <string>

namespace tkd {

// Base for every error raised by the library. Subclasses group failures by
// who is at fault, which the CLI maps onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shapes that cannot be combined.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Violated precondition of an operation.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Invalid model / training / CLI configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class VocabularyError : public Error {
 public:
  using Error::Error;
};

class LengthError : public Error {
 public:
  using Error::Error;
};

// Numerical failure during optimization (NaN loss or gradient).
class TrainingError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Input table lacks a column named by the schema.
class SchemaError : public Error {
 public:
  using Error::Error;
};

}  // namespace tkd
