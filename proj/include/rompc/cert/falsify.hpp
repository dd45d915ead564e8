#pragma once

#include <cstdint>
#include <optional>

#include "rompc/cert/certificates.hpp"
#include "rompc/core/model.hpp"
#include "rompc/obs/luenberger.hpp"

namespace rompc::cert {

using core::PlantModel;
using core::VecXd;

// ============================================================================
// Sampling-based falsification of the dissipation inequalities
// ============================================================================
// Verification here means "no violation found over the sampled tuples", not a
// proof.  Samples are drawn from balls around the given centres; coordinates
// listed in the clip boxes are clamped so the draws stay where the
// certificates are claimed (the constraint set).

struct SampleOpts {
  std::size_t count = 10000;
  double radius = 1.0;          // state-ball radius
  std::uint64_t seed = 1;
  double input_radius = -1.0;   // defaults to `radius` when negative
  double disturbance_radius = -1.0;  // defaults to the model w_bound when negative
  VecXd x_center;               // defaults to the origin
  VecXd u_center;
  VecXd x_lower, x_upper;       // optional per-coordinate clamps
  VecXd u_lower, u_upper;
  double tolerance = 1e-9;
};

struct Witness {
  VecXd x, x_tilde, u, w, w_tilde;
  double lhs = 0.0;
  double rhs = 0.0;
};

struct FalsificationReport {
  std::size_t n_samples = 0;
  std::size_t n_violations = 0;
  double worst_residual = -std::numeric_limits<double>::infinity();
  std::optional<Witness> witness;  // the worst violating tuple, if any

  bool passed() const { return n_violations == 0; }
};

// W(f_w(x,u,w), f_w(x~,u,w~)) <= eta W(x,x~) + sigma1(|w-w~|) + sigma2(|y-y~|).
FalsificationReport verify_ioss_decrease(const PlantModel& model,
                                         const IossCertificate& cert,
                                         const SampleOpts& opts);

// V(f_w(x,u,w), f_w(x~,kappa(x~,x,u),w~)) <= rho V(x,x~) + sigma3(|w-w~|).
FalsificationReport verify_iss_clf(const PlantModel& model, const IssClfCertificate& cert,
                                   const SampleOpts& opts);

// Observer decrease (lhs1 <= eta~ Vo + sigma4) and injection bound
// (|L^| <= gamma_L1(Vo) + gamma_L2(|w|)); violations of either are reported.
FalsificationReport verify_observer(const PlantModel& model,
                                    const obs::LuenbergerObserver& observer,
                                    const ObserverCertificate& cert,
                                    const SampleOpts& opts);

// Tube cross inequality (used to certify configured tube gains):
// V(f(x-,u-), f^(x^,kappa(x^,x-,u-),y)) <= rho V(x-,x^) + gso(Vo(x^,x)) + gsw(w_bar).
FalsificationReport verify_tube_cross(const PlantModel& model,
                                      const obs::LuenbergerObserver& observer,
                                      const IssClfCertificate& clf,
                                      const ObserverCertificate& ocert,
                                      const core::Gain& gamma_so,
                                      const core::Gain& gamma_sw,
                                      const SampleOpts& opts);

}  // namespace rompc::cert
