#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "rompc/cert/quadratic_form.hpp"
#include "rompc/nlp/sqp.hpp"
#include "rompc/obs/luenberger.hpp"

namespace rompc::setm {

using cert::QuadraticForm;
using core::MatXd;
using core::PlantModel;
using core::VecXd;

// Data window for the set-membership radius program: (u, y) records for the
// last M steps anchored at the estimate M steps ago.
struct MembershipWindow {
  int M = 1;
  std::vector<std::pair<VecXd, VecXd>> records;  // chronological (u, y), size M
  VecXd anchor_x_hat;
  double anchor_e_bar = 0.0;
  // Optional reconstructed noise sequence for the known-feasible replay start.
  std::vector<VecXd> replay_w;
};

struct MembershipOptions {
  nlp::SolveOptions nlp;
  int extra_starts = 4;     // perturbed starts beyond replay + axis extremes
  int hop_rounds = 2;       // basin-hopping rounds around the incumbent
  int hops_per_round = 8;
  std::uint64_t seed = 77;  // deterministic perturbations
};

struct MembershipResult {
  double gamma_hat = 0.0;
  VecXd x_init;                 // maximizing initial state
  std::vector<VecXd> w_seq;     // maximizing noise sequence
  nlp::SolveStatus status = nlp::SolveStatus::converged;
};

// Maximizes Vo(x^_t, x-_0) over trajectories consistent with the window data,
// the anchor ellipsoid, and |w| <= w_bar.  Throws InfeasibleError when every
// start ends infeasible (outlier-noise signal).
MembershipResult solve_membership(const PlantModel& model, const MembershipWindow& win,
                                  const QuadraticForm& Vo, const VecXd& x_hat_t,
                                  double w_bar, const MembershipOptions& opts = {});

// e_t = min(gamma_hat, eta~ e_{t-1} + sigma4(w_bar)).
inline double membership_update(double gamma_hat, double e_bar_prev,
                                const cert::ObserverCertificate& co, double w_bar) {
  return std::min(gamma_hat, co.eta_tilde * e_bar_prev + co.sigma4.value(w_bar));
}

// Max violation of the membership constraints for a given trajectory start and
// noise sequence; regression hook for the truth-replay feasibility property.
double membership_violation(const PlantModel& model, const MembershipWindow& win,
                            const QuadraticForm& Vo, const VecXd& x_init,
                            const std::vector<VecXd>& w_seq, double w_bar);

}  // namespace rompc::setm
