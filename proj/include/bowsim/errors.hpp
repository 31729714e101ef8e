#pragma once

#include <stdexcept>
#include <string>

namespace bowsim {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Argument outside the mathematical domain (non-finite input, t out of range, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Mismatched matrix/batch shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or precondition breach in user-supplied settings.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Nonlinear solver failed (FDM Newton, eigensolvers).
class SolverError : public Error {
 public:
  using Error::Error;
};

class SpectralError : public Error {
 public:
  using Error::Error;
};

class MetricError : public Error {
 public:
  using Error::Error;
};

class ExportError : public Error {
 public:
  using Error::Error;
};

}  // namespace bowsim
