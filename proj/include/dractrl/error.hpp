#pragma once

#include <stdexcept>
#include <string>

namespace dractrl {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or extent mismatch between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced or consumed.
class NumericError : public Error {
 public:
  using Error::Error;
};

// A softmax row with every entry blocked by the mask.
class DegenerateRowError : public NumericError {
 public:
  using NumericError::NumericError;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class LayoutError : public Error {
 public:
  using Error::Error;
};

class LengthError : public Error {
 public:
  using Error::Error;
};

// Bad magic, version or truncated payload in a serialized artifact.
class FormatError : public Error {
 public:
  using Error::Error;
};

class ProtocolError : public Error {
 public:
  using Error::Error;
};

class TransportError : public Error {
 public:
  using Error::Error;
};

}  // namespace dractrl
