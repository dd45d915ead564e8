#pragma once

#include <stdexcept>
#include <string>

namespace rompc {

// Contract violations (bad dimensions, negative radii, ...) throw
// std::invalid_argument directly.  The types below mark failures with a
// meaning callers may want to branch on.

// A user/solver callback returned a non-finite value.
class EvaluationError : public std::runtime_error {
 public:
  explicit EvaluationError(const std::string& what) : std::runtime_error(what) {}
};

// A certificate lacks the structure an operation needs (e.g. a gain that
// cannot be inverted symbolically).
class UnsupportedCertificateError : public std::runtime_error {
 public:
  explicit UnsupportedCertificateError(const std::string& what)
      : std::runtime_error(what) {}
};

// A model fails a structural requirement (rank, dimensions) of the method.
class ModelRejectedError : public std::runtime_error {
 public:
  explicit ModelRejectedError(const std::string& what) : std::runtime_error(what) {}
};

// An optimization problem has no feasible point (as far as the solver can tell).
class InfeasibleError : public std::runtime_error {
 public:
  explicit InfeasibleError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace rompc
