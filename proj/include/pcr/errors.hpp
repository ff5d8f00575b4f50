#pragma once

#include <stdexcept>
#include <string>

namespace pcr {

/// Base class for all errors thrown by this library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Invalid argument or violated precondition.
class ArgumentError : public Error {
public:
  using Error::Error;
};

/// Numerically degenerate input (zero rows, rank-deficient systems,
/// vanishing weights, empty correspondence sets, ...).
class DegeneracyError : public Error {
public:
  using Error::Error;
};

/// Malformed file contents.
class FormatError : public Error {
public:
  using Error::Error;
};

/// Non-finite value produced during a numeric computation.
class NumericError : public Error {
public:
  using Error::Error;
};

} // namespace pcr
