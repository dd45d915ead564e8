#pragma once

#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "rompc/core/model.hpp"
#include "rompc/errors.hpp"

namespace rompc::nlp {

using core::MatXd;
using core::VecXd;

// Scalar function of the decision vector with an optional analytic gradient.
// Missing gradients fall back to central finite differences in the solver.
struct NlpFunction {
  std::function<double(const VecXd&)> value;
  std::function<VecXd(const VecXd&)> gradient;
};

// Small dense nonlinear program
//   min  objective(v)
//   s.t. eq_i(v) = 0,  ineq_j(v) <= 0,  lower <= v <= upper.
struct NlpProblem {
  int n_vars = 0;
  NlpFunction objective;
  std::vector<NlpFunction> eq_constraints;
  std::vector<NlpFunction> ineq_constraints;
  VecXd lower;  // may be empty (no bounds) or contain -inf entries
  VecXd upper;

  bool has_bounds() const { return lower.size() == n_vars && upper.size() == n_vars; }
};

enum class SolveStatus { converged, iteration_limit, infeasible };

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::converged: return "converged";
    case SolveStatus::iteration_limit: return "iteration-limit";
    case SolveStatus::infeasible: return "infeasible";
  }
  return "?";
}

struct NlpSolution {
  VecXd vars;
  double objective_value = 0.0;
  double max_eq_violation = 0.0;
  double max_ineq_violation = 0.0;
  SolveStatus status = SolveStatus::converged;
  int iterations = 0;
  // l1 exact-penalty merit of the initial point and of the returned point,
  // both evaluated at the final penalty weight (monotone-descent contract).
  double merit_init = 0.0;
  double merit_returned = 0.0;

  bool feasible(double tol) const {
    return max_eq_violation <= tol && max_ineq_violation <= tol;
  }
};

struct SolveOptions {
  int max_iters = 150;
  double tol = 1e-9;            // stationarity / step tolerance
  double feas_tol = 1e-6;       // feasibility tolerance for reported status
  double penalty_init = 10.0;   // initial l1 penalty weight
  double penalty_growth = 10.0; // growth factor when multipliers exceed it
  double fd_step = 1e-6;        // relative finite-difference step
  std::string trace_csv;        // per-iteration CSV (iteration, merit, step norm)
};

// Central finite-difference gradient of an NlpFunction value callback.
VecXd fd_gradient(const std::function<double(const VecXd&)>& f, const VecXd& v,
                  double rel_step);

// Max relative gradient error against central finite differences over `count`
// points sampled in [lo, hi]^n (self-check mode).
double gradient_check(const NlpProblem& p, int count, std::uint64_t seed, double lo,
                      double hi);

}  // namespace rompc::nlp
