#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace vasoperf {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid user configuration (bad generator spec, bad fractions, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the domain of a closed-form law or a field.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Mismatched dimensions or violated call contract.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// 1D geometry that cannot be embedded in the 3D mesh.
class GeometryError : public Error {
 public:
  using Error::Error;
};

/// Linear system that is singular by construction (floating component, ...).
class SingularSystemError : public Error {
 public:
  using Error::Error;
};

/// Linear solver failed to reach its residual target.
class SolverError : public Error {
 public:
  SolverError(const std::string& what, std::vector<double> history)
      : Error(what), residual_history_(std::move(history)) {}

  const std::vector<double>& residual_history() const { return residual_history_; }

 private:
  std::vector<double> residual_history_;
};

/// A metric that is undefined for the given data (zero variance, no samples).
class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

}  // namespace vasoperf
