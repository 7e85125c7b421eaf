#pragma once

#include <stdexcept>
#include <string>

namespace dipw {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Malformed input file: missing column, bad header, wrong field count.
class SchemaError : public Error {
public:
  using Error::Error;
};

/// Unparseable or non-finite value; message carries row/column location.
class DataError : public Error {
public:
  using Error::Error;
};

/// Treatment vector outside {0,1} or an arm is empty.
class DegenerateTreatmentError : public Error {
public:
  using Error::Error;
};

/// Dimension mismatch between inputs of one operation.
class DimensionError : public Error {
public:
  using Error::Error;
};

/// Iterative solver failed to reach its tolerance; message carries the
/// last residual.
class ConvergenceError : public Error {
public:
  using Error::Error;
};

/// Invalid configuration value (bad flag, out-of-range parameter).
class ConfigError : public Error {
public:
  using Error::Error;
};

}  // namespace dipw
