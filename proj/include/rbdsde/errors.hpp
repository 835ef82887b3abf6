#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace rbdsde {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid construction input (empty interior, bad parameters, α ≥ 1, ...).
class SetupError : public Error {
 public:
  using Error::Error;
};

/// A point was outside the region an operation is defined on.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Iterative method hit its iteration cap before reaching tolerance.
class IterationLimitError : public Error {
 public:
  IterationLimitError(const std::string& what, double residual)
      : Error(what + " (residual " + std::to_string(residual) + ")"), residual_(residual) {}
  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

/// Non-finite value produced by a time-stepping recursion.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::size_t step)
      : Error(what + " at step " + std::to_string(step)), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

/// A Jacobian determinant that should be positive was not; refine Δt.
class PositivityError : public Error {
 public:
  using Error::Error;
};

class NumericalIntegrationError : public Error {
 public:
  using Error::Error;
};

/// Requested work exceeds the configured resource budget.
class ResourceError : public Error {
 public:
  using Error::Error;
};

/// Quadrature grid too coarse for the requested test function.
class ResolutionError : public Error {
 public:
  using Error::Error;
};

/// Malformed run configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace rbdsde
