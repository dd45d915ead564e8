#pragma once

#include <Eigen/Dense>
#include <stdexcept>

#include "rompc/core/model.hpp"

namespace rompc::cert {

using core::MatXd;
using core::VecXd;

// Symmetric positive-definite quadratic form V(a, b) = (a-b)' P (a-b).
class QuadraticForm {
 public:
  QuadraticForm() = default;

  explicit QuadraticForm(MatXd P) : P_(std::move(P)) {
    if (P_.rows() != P_.cols()) throw std::invalid_argument("QuadraticForm: P not square");
    if (!P_.isApprox(P_.transpose(), 1e-10))
      throw std::invalid_argument("QuadraticForm: P not symmetric");
    P_ = 0.5 * (P_ + P_.transpose().eval());
    Eigen::SelfAdjointEigenSolver<MatXd> es(P_);
    lambda_min_ = es.eigenvalues().minCoeff();
    lambda_max_ = es.eigenvalues().maxCoeff();
    if (lambda_min_ <= 0.0)
      throw std::invalid_argument("QuadraticForm: P not positive definite");
  }

  static QuadraticForm identity(int n) { return QuadraticForm(MatXd::Identity(n, n)); }

  int dim() const { return static_cast<int>(P_.rows()); }
  const MatXd& matrix() const { return P_; }
  double lambda_min() const { return lambda_min_; }
  double lambda_max() const { return lambda_max_; }

  double value(const VecXd& a, const VecXd& b) const {
    if (a.size() != P_.rows() || b.size() != P_.rows())
      throw std::invalid_argument("QuadraticForm: dimension mismatch");
    const VecXd d = a - b;
    return d.dot(P_ * d);
  }

  double value_diff(const VecXd& d) const { return d.dot(P_ * d); }
  double pnorm(const VecXd& d) const { return std::sqrt(value_diff(d)); }

 private:
  MatXd P_;
  double lambda_min_ = 0.0;
  double lambda_max_ = 0.0;
};

}  // namespace rompc::cert
