#pragma once

#include <stdexcept>
#include <string>

namespace nima {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Input cannot define an orientation or rotation (zero vector, zero quaternion).
class DegenerateInput : public Error {
public:
  using Error::Error;
};

class InsufficientData : public Error {
public:
  using Error::Error;
};

/// Design matrix is rank deficient or too badly conditioned to fit.
class SingularSystem : public Error {
public:
  SingularSystem(const std::string& what, int rank, double condition)
      : Error(what), rank_(rank), condition_(condition) {}
  int rank() const { return rank_; }
  double condition() const { return condition_; }

private:
  int rank_;
  double condition_;
};

class ConvergenceError : public Error {
public:
  ConvergenceError(const std::string& what, double residual) : Error(what), residual_(residual) {}
  double residual() const { return residual_; }

private:
  double residual_;
};

/// Non-finite values, malformed rows, inconsistent streams.
class DataError : public Error {
public:
  using Error::Error;
};

class TrainingFailure : public Error {
public:
  using Error::Error;
};

class ConfigError : public Error {
public:
  using Error::Error;
};

class IoError : public Error {
public:
  using Error::Error;
};

}  // namespace nima
