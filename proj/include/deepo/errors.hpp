#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace deepo {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Matrix shapes do not match what an operation requires.
class DimensionError : public Error {
public:
  using Error::Error;
};

/// Malformed input such as an asymmetric or indefinite weight.
class InputError : public Error {
public:
  using Error::Error;
};

/// A matrix that must be Schur stable is not.
class InstabilityError : public Error {
public:
  InstabilityError(const std::string& what, double radius) : Error(what), radius_(radius) {}
  double radius() const noexcept { return radius_; }

private:
  double radius_;
};

/// An iterative solver did not converge.
class SolverError : public Error {
public:
  using Error::Error;
};

/// A matrix required to have full row rank does not.
class RankError : public Error {
public:
  RankError(const std::string& what, double min_singular_value)
      : Error(what), min_singular_value_(min_singular_value) {}
  double min_singular_value() const noexcept { return min_singular_value_; }

private:
  double min_singular_value_;
};

/// A covariance policy violates the data equality constraints or stability.
class FeasibilityError : public Error {
public:
  FeasibilityError(const std::string& what, double v_residual, double h_residual)
      : Error(what), v_residual_(v_residual), h_residual_(h_residual) {}
  double v_residual() const noexcept { return v_residual_; }
  double h_residual() const noexcept { return h_residual_; }

private:
  double v_residual_;
  double h_residual_;
};

/// A linear solve is too ill-conditioned to trust.
class ConditioningError : public Error {
public:
  using Error::Error;
};

/// A simulated trajectory blew up.
class DivergenceError : public Error {
public:
  DivergenceError(const std::string& what, std::size_t step) : Error(what), step_(step) {}
  std::size_t step() const noexcept { return step_; }

private:
  std::size_t step_;
};

/// Random system generation gave up.
class GenerationError : public Error {
public:
  using Error::Error;
};

/// Dataset too short to be persistently exciting.
class DataLengthError : public Error {
public:
  using Error::Error;
};

/// A matrix that should be positive definite is numerically singular.
class DegeneracyError : public Error {
public:
  using Error::Error;
};

/// The tracking resolvent (I - A - BK) is singular.
class TrackingError : public Error {
public:
  using Error::Error;
};

/// A convergence-rate fit has no usable data.
class FitError : public Error {
public:
  using Error::Error;
};

}  // namespace deepo
