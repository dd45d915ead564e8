#pragma once

#include <Eigen/Dense>

#include "rompc/core/model.hpp"

namespace rompc::nlp {

// Dense strictly convex quadratic program
//   min 1/2 x' G x + g0' x
//   s.t. AE x = bE,  AI x <= bI
// solved with the Goldfarb-Idnani dual active-set method.  G must be positive
// definite.  Returns the Lagrange multipliers of the active constraints so the
// SQP layer can size its penalty weight.

struct QpResult {
  bool feasible = false;
  core::VecXd x;
  double objective = 0.0;
  core::VecXd eq_multipliers;    // one per equality row (signed)
  core::VecXd ineq_multipliers;  // one per inequality row (>= 0, 0 if inactive)
  int iterations = 0;
};

QpResult solve_qp(const core::MatXd& G, const core::VecXd& g0, const core::MatXd& AE,
                  const core::VecXd& bE, const core::MatXd& AI, const core::VecXd& bI);

}  // namespace rompc::nlp
