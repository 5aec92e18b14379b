// SPDX-License-Identifier: Apache-2.0
//
// Shared numeric types and the error hierarchy used across gridpinn.

#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace gridpinn {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Base class of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input outside the domain of a model or operation (non-finite values,
/// zero voltage magnitude, invalid parameters).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Mismatched vector/matrix dimensions.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Caller violated a documented precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Query outside a stored range (trajectory times, evaluation grid).
class RangeError : public Error {
 public:
  using Error::Error;
};

/// An iterative method did not converge.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, int iterations, double residual)
      : Error(what), iterations_(iterations), residual_(residual) {}

  int iterations() const noexcept { return iterations_; }
  double residual() const noexcept { return residual_; }

 private:
  int iterations_;
  double residual_;
};

/// Integration produced a non-finite state.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, double time)
      : Error(what), time_(time) {}

  double time() const noexcept { return time_; }

 private:
  double time_;
};

/// Adaptive step size collapsed; the problem needs an implicit method.
class StiffnessError : public Error {
 public:
  StiffnessError(const std::string& what, double time)
      : Error(what), time_(time) {}

  double time() const noexcept { return time_; }

 private:
  double time_;
};

/// Line search could not bracket an acceptable step.
class SearchError : public Error {
 public:
  using Error::Error;
};

/// Training produced NaN/Inf losses or gradients.
class NumericalError : public Error {
 public:
  NumericalError(const std::string& what, long epoch)
      : Error(what), epoch_(epoch) {}

  long epoch() const noexcept { return epoch_; }

 private:
  long epoch_;
};

/// Invalid experiment configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// File system failure; the message carries the offending path.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Raises the allocator's mmap and trim thresholds so the large, short-lived
/// buffers of repeated tape recordings reuse heap pages instead of being
/// mapped and faulted in on every evaluation. No-op outside glibc.
void tune_allocator();

inline bool all_finite(const Eigen::Ref<const Matrix>& m) {
  return m.allFinite();
}

}  // namespace gridpinn
