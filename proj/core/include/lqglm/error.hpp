#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace lqglm {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// An argument lies outside the domain of a function: non-positive density
// argument, natural parameter outside Theta, q*theta outside Theta, ...
class DomainError : public Error {
 public:
  explicit DomainError(const std::string& what,
                       std::optional<std::size_t> row = std::nullopt,
                       std::optional<double> bound = std::nullopt)
      : Error(what), row_(row), bound_(bound) {}

  // Observation index that triggered the error, when applicable.
  std::optional<std::size_t> row() const { return row_; }
  // The violated endpoint of the parameter space, when applicable.
  std::optional<double> bound() const { return bound_; }

 private:
  std::optional<std::size_t> row_;
  std::optional<double> bound_;
};

// Cholesky met a non-positive pivot.
class SingularityError : public Error {
 public:
  SingularityError(const std::string& what, std::size_t pivot)
      : Error(what), pivot_(pivot) {}
  std::size_t pivot() const { return pivot_; }

 private:
  std::size_t pivot_;
};

// A callback returned a non-finite value.
class EvaluationError : public Error {
 public:
  EvaluationError(const std::string& what, double location)
      : Error(what), location_(location) {}
  double location() const { return location_; }

 private:
  double location_;
};

// Inconsistent arguments supplied by the caller.
class UsageError : public Error {
 public:
  using Error::Error;
};

// One-dimensional maximization found its optimum on the bracket boundary.
class BracketError : public Error {
 public:
  using Error::Error;
};

// Added-variable direction lies (numerically) in the column space of X.
class DegenerateDirectionError : public Error {
 public:
  using Error::Error;
};

// Too few grid fits converged to select q.
class SelectionError : public Error {
 public:
  using Error::Error;
};

}  // namespace lqglm
