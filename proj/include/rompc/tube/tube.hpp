#pragma once

#include <utility>
#include <vector>

#include "rompc/cert/certificates.hpp"
#include "rompc/obs/luenberger.hpp"

namespace rompc::tube {

using cert::IssClfCertificate;
using cert::ObserverCertificate;
using core::Gain;
using core::MatXd;
using core::VecXd;

// Cross-gains feeding the observer error and disturbance bound into the tube
// scaling recursion.
struct TubeGains {
  Gain gamma_so;  // from Vo(x^, x)
  Gain gamma_sw;  // from w_bar
};

// gamma_so = sigma3 o (2 |Ex^dagger| gamma_L1), gamma_sw analogous: the
// injection-bound composition.  Configurations may carry tighter gains
// certified by sampling; this is the constructive default.
inline TubeGains tube_gains(const IssClfCertificate& clf, const ObserverCertificate& oc,
                            const MatXd& E_x) {
  const double pinv_norm = obs::right_inverse_norm(E_x);
  TubeGains g;
  g.gamma_so = clf.sigma3.compose(oc.gamma_L1.scale_output(2.0 * pinv_norm));
  g.gamma_sw = clf.sigma3.compose(oc.gamma_L2.scale_output(2.0 * pinv_norm));
  return g;
}

// Asymptotic radii of the dynamic output feedback.
struct RpiBounds {
  double e_max = 0.0;
  double s_max = 0.0;
};

inline RpiBounds rpi_bounds(const TubeGains& gains, const ObserverCertificate& oc,
                            const IssClfCertificate& clf, double w_bar) {
  RpiBounds b;
  b.e_max = oc.sigma4.value(w_bar) / (1.0 - oc.eta_tilde);
  b.s_max = (gains.gamma_so.value(b.e_max) + gains.gamma_sw.value(w_bar)) /
            (1.0 - clf.rho);
  return b;
}

// Deterministic tube propagation:
//   e_k = (1 - eta~^k)/(1 - eta~) sigma4(w_bar) + eta~^k e0
//   s_{k+1} = rho s_k + gamma_so(e_k) + gamma_sw(w_bar).
inline std::pair<std::vector<double>, std::vector<double>> propagate_tube(
    double s0, double e0, int N, const TubeGains& gains, const ObserverCertificate& oc,
    const IssClfCertificate& clf, double w_bar) {
  if (s0 < 0.0 || e0 < 0.0) throw std::invalid_argument("propagate_tube: s0, e0 >= 0");
  std::vector<double> s(N + 1), e(N + 1);
  const double sig4 = oc.sigma4.value(w_bar);
  const double gsw = gains.gamma_sw.value(w_bar);
  double eta_pow = 1.0;
  for (int k = 0; k <= N; ++k) {
    e[k] = (1.0 - eta_pow) / (1.0 - oc.eta_tilde) * sig4 + eta_pow * e0;
    eta_pow *= oc.eta_tilde;
  }
  s[0] = s0;
  for (int k = 0; k < N; ++k)
    s[k + 1] = clf.rho * s[k] + gains.gamma_so.value(e[k]) + gsw;
  return {s, e};
}

// Tracking feedback u = u- + K (x^ - x-).
inline VecXd ancillary_feedback(const IssClfCertificate& clf, const VecXd& x_hat,
                                const VecXd& x_bar, const VecXd& u_bar) {
  return clf.kappa(x_hat, x_bar, u_bar);
}

}  // namespace rompc::tube
