#pragma once

#include <algorithm>
#include <span>
#include <vector>

#include "rompc/obs/luenberger.hpp"

namespace rompc::obs {

using cert::IossCertificate;
using cert::ObserverCertificate;
using core::Gain;

// Per-record residual weight sigma1(w_bar + |w^|) + sigma2(|y^ - y|).
inline double ioss_residual(const IossCertificate& ci, const HistoryRecord& rec,
                            double w_bar) {
  if (rec.w_hat.size() == 0)
    throw ModelRejectedError(
        "detectability update needs w^; model lacks one-step controllability");
  return ci.sigma1.value(w_bar + rec.w_hat.norm()) +
         ci.sigma2.value((rec.y_hat - rec.y).norm());
}

// ============================================================================
// Certified-radius updates
// ============================================================================

// Identical-Lyapunov update (W = Vo):
//   e+ = min( eta~ e + sigma4(w_bar), eta e + sigma1(w_bar+|w^|) + sigma2(|y^-y|) )
// using the newest history record.
inline double error_update_identical(const EstimatorState& st,
                                     const IossCertificate& ci,
                                     const ObserverCertificate& co, double w_bar) {
  const HistoryRecord& rec = st.newest();
  const double observer_branch = co.eta_tilde * st.e_bar + co.sigma4.value(w_bar);
  const double ioss_branch = ci.eta * st.e_bar + ioss_residual(ci, rec, w_bar);
  return std::min(observer_branch, ioss_branch);
}

// General update across window lengths M in [1, min(t, M_bar)]:
//   e_{IOSS,M} = sum_{j=1}^{M} eta^{j-1} resid(t-j) + eta^M alpha2(alpha5^{-1}(e_{t-M}))
//   e_IOSS     = alpha6(alpha1^{-1}(min_M e_{IOSS,M}))
//   e+         = min(eta~ e_{t-1} + sigma4(w_bar), e_IOSS)
// e_bar_history holds past radii newest-first: e_bar_history[j-1] = e_{t-j}.
inline double error_update_general(const EstimatorState& st, const IossCertificate& ci,
                                   const ObserverCertificate& co, double w_bar,
                                   std::size_t M_bar,
                                   std::span<const double> e_bar_history) {
  if (st.history.empty() || e_bar_history.empty())
    throw std::invalid_argument("error_update_general: empty history");
  const Gain a2_inv5 = ci.alpha2.compose(co.alpha5.inverse());
  const Gain a6_inv1 = co.alpha6.compose(ci.alpha1.inverse());

  const std::size_t M_max = std::min({M_bar, st.history.size(), e_bar_history.size(),
                                      static_cast<std::size_t>(std::max<long>(st.t, 0))});
  if (M_max < 1) throw std::invalid_argument("error_update_general: no usable window");

  double best = std::numeric_limits<double>::infinity();
  double resid_sum = 0.0;
  double eta_pow = 1.0;
  for (std::size_t M = 1; M <= M_max; ++M) {
    resid_sum += eta_pow * ioss_residual(ci, st.lag(M), w_bar);
    eta_pow *= ci.eta;
    const double e_anchor = e_bar_history[M - 1];
    best = std::min(best, resid_sum + eta_pow * a2_inv5.value(e_anchor));
  }
  const double e_ioss = a6_inv1.value(best);
  const double observer_branch = co.eta_tilde * e_bar_history[0] + co.sigma4.value(w_bar);
  return std::min(observer_branch, e_ioss);
}

// k-step worst-case prediction of the radius:
//   e_{t+k} <= eta~^k e_t + (1 - eta~^k)/(1 - eta~) sigma4(w_bar).
inline double predict_error(double e_bar, int k, const ObserverCertificate& co,
                            double w_bar) {
  if (k < 0) throw std::invalid_argument("predict_error: k >= 0");
  const double etak = std::pow(co.eta_tilde, k);
  return etak * e_bar + (1.0 - etak) / (1.0 - co.eta_tilde) * co.sigma4.value(w_bar);
}

// Bound on |x^_{t+1} - f(x^_t, u_t)|, the deviation of the observer dynamics
// from the nominal model.
inline double prediction_mismatch_bound(double e_bar, const ObserverCertificate& co,
                                        double w_bar) {
  return co.gamma_L1.value(e_bar) + co.gamma_L2.value(w_bar);
}

// ============================================================================
// Observability-based update
// ============================================================================

// Window certificate for uniformly final-state-observable systems.
struct ObservabilityCertificate {
  int nu = 1;
  Gain gamma_w;
  Gain gamma_v;

  ObservabilityCertificate() = default;
  ObservabilityCertificate(int nu_, Gain gw, Gain gv)
      : nu(nu_), gamma_w(std::move(gw)), gamma_v(std::move(gv)) {
    if (nu < 1) throw std::invalid_argument("ObservabilityCertificate: nu >= 1");
  }
};

// e_obs = sum_{j=1}^{nu} gamma_w(w_bar + |w^_{t-j}|) + gamma_v(|y_{t-j} - y^_{t-j}|);
// returns min(eta~ e_prev + sigma4(w_bar), alpha6(e_obs)).
inline double observability_update(const EstimatorState& st,
                                   const ObservabilityCertificate& oc,
                                   const ObserverCertificate& co, double w_bar,
                                   double e_bar_prev) {
  if (st.history.size() < static_cast<std::size_t>(oc.nu) || st.t < oc.nu)
    throw std::invalid_argument("observability_update: insufficient history");
  double e_obs = 0.0;
  for (int j = 1; j <= oc.nu; ++j) {
    const HistoryRecord& rec = st.lag(j);
    e_obs += oc.gamma_w.value(w_bar + rec.w_hat.norm()) +
             oc.gamma_v.value((rec.y - rec.y_hat).norm());
  }
  const double observer_branch = co.eta_tilde * e_bar_prev + co.sigma4.value(w_bar);
  return std::min(observer_branch, co.alpha6.value(e_obs));
}

// ============================================================================
// Outlier robustness
// ============================================================================

// Inflates a certified-radius sequence to stay valid under disturbances that
// exceed w_bar.  With eta_eps = max(eta~, eta) and a residual gain sigma_eps
// majorizing both sigma1 and sigma4 shifts on [0, c]:
//   bound_t = e_t + sum_{k<t} eta_eps^{t-k-1} sigma_eps(max(|w_k| - w_bar, 0))
//           + eta_eps^t * initial_excess.
inline std::vector<double> outlier_inflation(std::span<const double> e_bar_seq,
                                             std::span<const double> w_norm_seq,
                                             double w_bar, const IossCertificate& ci,
                                             const ObserverCertificate& co, double c,
                                             double initial_excess = 0.0) {
  if (w_norm_seq.size() + 1 < e_bar_seq.size())
    throw std::invalid_argument("outlier_inflation: need w norms for every step");
  const double eta_eps = std::max(co.eta_tilde, ci.eta);
  const Gain sigma_eps = ci.sigma1.shift_majorant(c) + co.sigma4.shift_majorant(c);

  std::vector<double> out(e_bar_seq.size());
  double carry = std::max(initial_excess, 0.0);
  for (std::size_t t = 0; t < e_bar_seq.size(); ++t) {
    out[t] = e_bar_seq[t] + carry;
    if (t < w_norm_seq.size()) {
      const double excess = std::max(w_norm_seq[t] - w_bar, 0.0);
      carry = eta_eps * carry + sigma_eps.value(excess);
    }
  }
  return out;
}

}  // namespace rompc::obs
