#pragma once

#include <functional>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "rompc/core/gain.hpp"
#include "rompc/core/model.hpp"

namespace rompc::core {

// One scalar constraint g(x, u) <= 0 with optional analytic gradients.
struct ConstraintFn {
  std::function<double(const VecXd&, const VecXd&)> g;
  // d g / d x and d g / d u; finite differences are used if absent.
  std::function<VecXd(const VecXd&, const VecXd&)> grad_x;
  std::function<VecXd(const VecXd&, const VecXd&)> grad_u;
};

// Affine row a'x + b'u + c <= 0 with exact gradients.
inline ConstraintFn affine_constraint(VecXd a, VecXd b, double c) {
  ConstraintFn f;
  f.g = [a, b, c](const VecXd& x, const VecXd& u) {
    return a.dot(x) + b.dot(u) + c;
  };
  f.grad_x = [a](const VecXd&, const VecXd&) { return a; };
  f.grad_u = [b](const VecXd&, const VecXd&) { return b; };
  return f;
}

// ============================================================================
// Constraint set
// ============================================================================
// Z = { (x,u) : g_i(x,u) <= 0 } together with the per-row tightening gains
// sigma_{g_i,s} (tube scaling channel) and sigma_{g_i,o} (estimation error
// channel).  The tightening gains take the incremental Lyapunov values s, e
// as arguments, not norms.

class ConstraintSet {
 public:
  ConstraintSet() = default;
  ConstraintSet(std::vector<ConstraintFn> g, std::vector<Gain> tightening_s,
                std::vector<Gain> tightening_o)
      : g_(std::move(g)),
        tightening_s_(std::move(tightening_s)),
        tightening_o_(std::move(tightening_o)) {
    if (tightening_s_.size() != g_.size() || tightening_o_.size() != g_.size())
      throw std::invalid_argument("ConstraintSet: one tightening gain pair per row");
  }

  int rows() const { return static_cast<int>(g_.size()); }
  const ConstraintFn& row(int i) const { return g_.at(i); }
  const Gain& tightening_s(int i) const { return tightening_s_.at(i); }
  const Gain& tightening_o(int i) const { return tightening_o_.at(i); }

  bool feasible(const VecXd& x, const VecXd& u, double tol = 0.0) const {
    for (const auto& c : g_)
      if (c.g(x, u) > tol) return false;
    return true;
  }

  double max_violation(const VecXd& x, const VecXd& u) const {
    double worst = -std::numeric_limits<double>::infinity();
    for (const auto& c : g_) worst = std::max(worst, c.g(x, u));
    return worst;
  }

  // The constraint-tightening MPC requires superadditive scaling gains.
  void require_superadditive_tightening() const {
    for (const auto& s : tightening_s_)
      if (!s.is_closed_form() || !s.is_superadditive())
        throw std::invalid_argument(
            "ConstraintSet: tightening_s gains must be superadditive "
            "(all exponents >= 1) for the tightened formulation");
  }

 private:
  std::vector<ConstraintFn> g_;
  std::vector<Gain> tightening_s_;
  std::vector<Gain> tightening_o_;
};

}  // namespace rompc::core
