#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "rompc/cert/certificates.hpp"
#include "rompc/nlp/sqp.hpp"
#include "rompc/obs/error_bounds.hpp"

namespace rompc::mhe {

using core::Gain;
using core::MatXd;
using core::PlantModel;
using core::VecXd;

// Moving-horizon estimation with a discounted detectability cost.  eta,
// sigma1, sigma2 come from the detectability certificate; sigma_delta is the
// continuity modulus of the certificate form; alpha1 its (invertible) lower
// envelope.
struct MheConfig {
  int M = 1;
  double eta = 0.0;
  Gain sigma1;
  Gain sigma2;
  Gain sigma_delta;
  Gain alpha1;

  MheConfig() = default;
  MheConfig(int M_, const cert::IossCertificate& ci, Gain sigma_delta_)
      : M(M_),
        eta(ci.eta),
        sigma1(ci.sigma1),
        sigma2(ci.sigma2),
        sigma_delta(std::move(sigma_delta_)),
        alpha1(ci.alpha1) {
    if (M < 1) throw std::invalid_argument("MheConfig: M >= 1");
    if (sigma_delta.value(0.0) != 0.0)
      throw std::invalid_argument("MheConfig: sigma_delta(0) must be 0");
  }
};

// Past (u, y) data together with the anchor estimate and radius at the start
// of the window.
struct EstimationWindow {
  std::vector<std::pair<VecXd, VecXd>> records;  // chronological (u, y)
  VecXd anchor_x_hat;
  double anchor_e_bar = 0.0;

  int length() const { return static_cast<int>(records.size()); }
};

struct MheSolution {
  VecXd x_hat_t;       // estimate at the window end
  VecXd x_hat_anchor;  // optimized initial state
  std::vector<VecXd> w_seq;  // optimal noise sequence (chronological)
  std::vector<VecXd> y_seq;  // explained outputs (chronological)
  double cost = 0.0;   // NLP objective at the returned point
  double e_bar = 0.0;  // certified radius, exact formula at the returned point
  nlp::SolveStatus status = nlp::SolveStatus::converged;
};

// Solves the discounted-cost MHE over (x^_{-M|t}, w^_{.|t}); unconstrained by
// construction, so any returned point yields a sound radius.
MheSolution solve_mhe(const PlantModel& model, const MheConfig& cfg,
                      const EstimationWindow& window, double w_bar,
                      const nlp::SolveOptions& opts = {},
                      const std::vector<VecXd>* extra_inits = nullptr);

// Worst-case prediction of the MHE radius from the anchor radius:
//   (1-eta^M)/(1-eta) sigma1(2 w_bar) + eta^M (e_anchor + sigma_delta(alpha1^{-1}(e_anchor))).
double mhe_apriori_bound(const MheConfig& cfg, int M_t, double e_bar_anchor,
                         double w_bar);

// Continuity modulus of the nominal step on a sampled region: linear gain with
// the largest sampled Lipschitz quotient inflated by 2x.  Any majorant works
// for the prediction-mismatch inequality; this is a pragmatic estimate, not a
// proof.
Gain estimate_sigma_f(const PlantModel& model, const VecXd& x_center,
                      const VecXd& u_center, double radius, std::size_t samples,
                      std::uint64_t seed);

// One step of the combined MHE-Luenberger scheme: run the MHE, keep its
// estimate only if its radius also satisfies the observer-predictable bounds,
// else fall back to the one-step Luenberger update.
struct CombinedUpdateResult {
  obs::EstimatorState state;
  bool mhe_branch = false;
  std::optional<MheSolution> mhe;
  double luenberger_e_bar = 0.0;
};

CombinedUpdateResult combined_update(const PlantModel& model, const MheConfig& cfg,
                                     const obs::LuenbergerObserver& observer,
                                     const obs::EstimatorState& st,
                                     const EstimationWindow& window, const VecXd& u,
                                     const VecXd& y, double w_bar,
                                     const nlp::SolveOptions& opts = {});

}  // namespace rompc::mhe
