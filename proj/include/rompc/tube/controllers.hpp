#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "rompc/core/constraints.hpp"
#include "rompc/mhe/mhe.hpp"
#include "rompc/nlp/sqp.hpp"
#include "rompc/tube/tube.hpp"

namespace rompc::tube {

using core::ConstraintSet;
using core::PlantModel;

// Stage cost l(x-, u-, e-, s-) = l_nom(x-, u-) + l_e(e-) + l_s(s-); l_e, l_s
// monotone gains so worst-case performance bounds apply.
struct StageCost {
  std::function<double(const VecXd&, const VecXd&)> l_nom;
  std::function<std::pair<VecXd, VecXd>(const VecXd&, const VecXd&)> l_nom_grad;
  Gain l_e;
  Gain l_s;

  double eval(const VecXd& x, const VecXd& u, double e, double s) const {
    return l_nom(x, u) + l_e.value(e) + l_s.value(s);
  }
};

// Quadratic stage cost around a setpoint, gradients included.
StageCost quadratic_stage_cost(const VecXd& x_ref, const VecXd& u_ref, const MatXd& Q,
                               const MatXd& R, Gain l_e, Gain l_s);

struct TerminalIngredients {
  enum class Mode { equality, set };
  Mode mode = Mode::equality;
  VecXd x_s;
  VecXd u_s;
  double c_f = 0.0;  // set mode: V_delta(x-, x_s) <= c_f
};

struct TubeSolution {
  enum class Status { optimal, candidate_accepted, infeasible };
  std::vector<VecXd> x_bar;  // 0..N
  std::vector<VecXd> u_bar;  // 0..N-1
  std::vector<double> s_bar;
  std::vector<double> e_bar;
  double cost = 0.0;
  Status status = Status::infeasible;
  nlp::SolveStatus nlp_status = nlp::SolveStatus::converged;

  bool usable() const { return status != Status::infeasible; }
};

inline const char* to_string(TubeSolution::Status s) {
  switch (s) {
    case TubeSolution::Status::optimal: return "optimal";
    case TubeSolution::Status::candidate_accepted: return "candidate-accepted";
    case TubeSolution::Status::infeasible: return "infeasible";
  }
  return "?";
}

// Everything a controller solve needs besides the current estimate.
struct TubeMpcConfig {
  const PlantModel* model = nullptr;
  const ConstraintSet* constraints = nullptr;
  cert::IssClfCertificate clf;
  cert::ObserverCertificate ocert;
  TubeGains gains;
  TerminalIngredients terminal;
  StageCost cost;
  int N = 10;
  double w_bar = 0.0;
  nlp::SolveOptions nlp;
};

// Homothetic tube MPC: optimizes (x-_0, u-_{0..N-1}) with s-_0 = V_delta(x-_0, x^).
TubeSolution solve_homothetic(const TubeMpcConfig& cfg, const VecXd& x_hat, double e_t,
                              const TubeSolution* candidate = nullptr);

// Constraint-tightening MPC: x-_0 = x^, s-_0 = 0, tightening precomputed.
TubeSolution solve_tightened(const TubeMpcConfig& cfg, const VecXd& x_hat, double e_t,
                             const TubeSolution* candidate = nullptr);

// Offline worst-case baseline: constant scalings (e_max, s_max) everywhere.
// Default form keeps the initial state free inside the worst-case tube
// (straight-shift recursive feasibility); pin_x0 fixes it to the estimate for
// paired-cost comparisons against the pinned formulations.
TubeSolution solve_rigid(const TubeMpcConfig& cfg, const RpiBounds& rpi,
                         const VecXd& x_hat, const TubeSolution* candidate = nullptr,
                         bool pin_x0 = false);

// Shifts a solution one step (append the terminal law) and re-propagates the
// scalings from the new estimate; the feasibility re-check happens inside the
// next solve.
TubeSolution make_shifted_candidate(const TubeMpcConfig& cfg, const TubeSolution& prev,
                                    const VecXd& x_hat_next, double e_next,
                                    bool pin_x0_to_estimate);

// Max constraint violation of a TubeSolution under the config's tightening
// (homothetic form); used by tests and the candidate re-check.
double candidate_violation(const TubeMpcConfig& cfg, const TubeSolution& sol,
                           const VecXd& x_hat, double e_t, bool pin_x0);

// Decision-space size of the transcriptions: the pinned formulations match a
// nominal MPC exactly (N n_u), the homothetic adds the free initial state.
int decision_variable_count(const TubeMpcConfig& cfg, bool pinned);

// --- joint estimation and control -------------------------------------------

struct JointResult {
  TubeSolution solution;
  VecXd x_hat;        // accepted estimate at time t
  double e_bar = 0.0; // accepted radius at time t
  bool joint_branch = false;
  double value = 0.0;  // optimal cost of the problem that produced the input
  obs::EstimatorState state;  // estimator state after the step (either branch)
  nlp::SolveStatus nlp_status = nlp::SolveStatus::converged;
};

// One step of the combined MHE-MPC scheme: solve the joint problem; accept it
// iff feasible and its value is no worse than the running bound V_bar, else
// run the Luenberger update and the homothetic MPC.
JointResult solve_mhe_mpc(const TubeMpcConfig& cfg, const mhe::MheConfig& mhe_cfg,
                          const obs::LuenbergerObserver& observer,
                          const obs::EstimatorState& st, const mhe::EstimationWindow& window,
                          double V_bar, const TubeSolution* candidate = nullptr);

}  // namespace rompc::tube
