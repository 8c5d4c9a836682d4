#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mkv {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration or argument (CLI exit code 2).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Vector length does not match the declared model dimension.
class DimensionError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Parameter outside the domain where a closed form is defined.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Euler scheme produced a non-finite or runaway state.
class SimulationDivergedError : public Error {
 public:
  SimulationDivergedError(std::size_t step, const std::string& what)
      : Error("simulation diverged at step " + std::to_string(step) + ": " + what), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

/// Online parameter estimate became non-finite or exceeded the runaway guard.
class EstimatorDivergedError : public Error {
 public:
  EstimatorDivergedError(std::size_t step, const std::string& what)
      : Error("estimator diverged at step " + std::to_string(step) + ": " + what), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

/// Closed-form estimator denominators vanished (parameters not identifiable).
class DegenerateEstimateError : public Error {
 public:
  using Error::Error;
};

/// Iterative maximizer hit its iteration cap.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, std::vector<double> last_iterate, double grad_norm)
      : Error(what), last_iterate_(std::move(last_iterate)), grad_norm_(grad_norm) {}
  const std::vector<double>& last_iterate() const noexcept { return last_iterate_; }
  double grad_norm() const noexcept { return grad_norm_; }

 private:
  std::vector<double> last_iterate_;
  double grad_norm_;
};

/// Too many Monte-Carlo trials were excluded (CLI exit code 3).
class ExclusionCapError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace mkv
