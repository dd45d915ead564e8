#pragma once

#include "rompc/nlp/problem.hpp"

namespace rompc::nlp {

// SQP with a damped-BFGS Hessian model and an l1 exact-penalty line search.
// The returned point never has a larger penalty merit than the initial point
// (evaluated at the final penalty weight).
NlpSolution solve(const NlpProblem& problem, const VecXd& init,
                  const SolveOptions& opts = {});

// Deterministic multistart: runs `solve` from each init (clamped to the box)
// and returns the best feasible solution, ties broken by start index.  If no
// start reaches feasibility, returns the least-infeasible solution with
// status = infeasible.
NlpSolution solve_multistart(const NlpProblem& problem, const std::vector<VecXd>& inits,
                             const SolveOptions& opts = {});

}  // namespace rompc::nlp
