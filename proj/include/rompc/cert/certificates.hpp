#pragma once

#include <optional>
#include <stdexcept>

#include "rompc/core/gain.hpp"
#include "rompc/cert/quadratic_form.hpp"

namespace rompc::cert {

using core::Gain;

// ============================================================================
// Incremental Lyapunov certificates
// ============================================================================
// All three certificates share the quadratic-form shape; the envelope gains
// alpha_i default to the eigenvalue envelopes lambda_min * r^2 <= V <=
// lambda_max * r^2 of the form.

// Detectability certificate: one-step decrease of W against disturbance and
// output differences,
//   W(f_w(x,u,w), f_w(x~,u,w~)) <= eta W(x,x~) + sigma1(|w-w~|) + sigma2(|y-y~|).
struct IossCertificate {
  QuadraticForm W;
  double eta = 0.0;  // in [0, 1)
  Gain sigma1;
  Gain sigma2;
  Gain alpha1;  // lower envelope of W
  Gain alpha2;  // upper envelope of W

  IossCertificate() = default;
  IossCertificate(QuadraticForm W_, double eta_, Gain s1, Gain s2)
      : W(std::move(W_)), eta(eta_), sigma1(std::move(s1)), sigma2(std::move(s2)) {
    if (eta < 0.0 || eta >= 1.0) throw std::invalid_argument("IossCertificate: eta in [0,1)");
    alpha1 = Gain::quadratic(W.lambda_min());
    alpha2 = Gain::quadratic(W.lambda_max());
  }
};

// Stabilizability certificate: V decreases under the tracking feedback
// kappa(x^, x-, u-) = u- + K (x^ - x-).
struct IssClfCertificate {
  QuadraticForm V;
  double rho = 0.0;  // in [0, 1)
  Gain sigma3;
  core::MatXd K;  // n_u x n_x
  Gain gamma_kappa;
  Gain alpha3;
  Gain alpha4;

  IssClfCertificate() = default;
  IssClfCertificate(QuadraticForm V_, double rho_, Gain s3, core::MatXd K_)
      : V(std::move(V_)), rho(rho_), sigma3(std::move(s3)), K(std::move(K_)) {
    if (rho < 0.0 || rho >= 1.0) throw std::invalid_argument("IssClfCertificate: rho in [0,1)");
    if (K.cols() != V.dim()) throw std::invalid_argument("IssClfCertificate: K cols != n_x");
    gamma_kappa = Gain::linear(K.norm() == 0.0 ? 0.0 : K.jacobiSvd().singularValues()(0));
    alpha3 = Gain::quadratic(V.lambda_min());
    alpha4 = Gain::quadratic(V.lambda_max());
  }

  core::VecXd kappa(const core::VecXd& x_hat, const core::VecXd& x_bar,
                    const core::VecXd& u_bar) const {
    return u_bar + K * (x_hat - x_bar);
  }
};

// Observer stability certificate (for a Luenberger-like observer):
//   Vo(f^(x^,u,y), f_w(x,u,w)) <= eta~ Vo(x^,x) + sigma4(|w|)
//   |L^(x^,u,y)| <= gamma_L1(Vo(x^,x)) + gamma_L2(|w|).
struct ObserverCertificate {
  QuadraticForm Vo;
  double eta_tilde = 0.0;  // in [0, 1)
  Gain sigma4;
  Gain gamma_L1;
  Gain gamma_L2;
  Gain alpha5;
  Gain alpha6;

  ObserverCertificate() = default;
  ObserverCertificate(QuadraticForm Vo_, double eta_tilde_, Gain s4, Gain gL1, Gain gL2)
      : Vo(std::move(Vo_)),
        eta_tilde(eta_tilde_),
        sigma4(std::move(s4)),
        gamma_L1(std::move(gL1)),
        gamma_L2(std::move(gL2)) {
    if (eta_tilde < 0.0 || eta_tilde >= 1.0)
      throw std::invalid_argument("ObserverCertificate: eta_tilde in [0,1)");
    alpha5 = Gain::quadratic(Vo.lambda_min());
    alpha6 = Gain::quadratic(Vo.lambda_max());
  }
};

// ============================================================================
// Identical-Lyapunov constants
// ============================================================================
// For f_w, h_w affine in w, a quadratic observer Lyapunov function Vo = |.|_Po^2
// with linear output injection is itself a detectability certificate with
//   eta    = (1+eps) eta~
//   sigma1 = (2(1+eps)/eps) (sqrt(lmax(Ex' Po Ex)) + sqrt(lmax(Ey' L' Po L Ey)))^2 r^2
//   sigma2 = (2(1+eps)/eps)  lmax(L' Po L) r^2.

struct IdenticalLyapunovConstants {
  double eta;
  Gain sigma1;
  Gain sigma2;
};

inline IdenticalLyapunovConstants identical_lyapunov_constants(
    const QuadraticForm& Po, const core::MatXd& L, const core::MatXd& E_x,
    const core::MatXd& E_y, double eta_tilde, double epsilon) {
  if (epsilon <= 0.0) throw std::invalid_argument("identical_lyapunov_constants: epsilon > 0");
  if (eta_tilde < 0.0 || eta_tilde >= 1.0)
    throw std::invalid_argument("identical_lyapunov_constants: eta_tilde in [0,1)");
  const double eta = (1.0 + epsilon) * eta_tilde;
  if (eta >= 1.0)
    throw std::invalid_argument(
        "identical_lyapunov_constants: (1+epsilon)*eta_tilde >= 1, epsilon infeasible");

  const core::MatXd& Po_m = Po.matrix();
  auto lmax = [](const core::MatXd& M) {
    if (M.size() == 0) return 0.0;
    Eigen::SelfAdjointEigenSolver<core::MatXd> es(0.5 * (M + M.transpose().eval()));
    return std::max(0.0, es.eigenvalues().maxCoeff());
  };

  const double lx = lmax(E_x.transpose() * Po_m * E_x);
  const core::MatXd LPoL = L.transpose() * Po_m * L;
  const double ly = lmax(E_y.transpose() * LPoL * E_y);
  const double lL = lmax(LPoL);

  const double factor = 2.0 * (1.0 + epsilon) / epsilon;
  const double c1 = factor * std::pow(std::sqrt(lx) + std::sqrt(ly), 2);
  const double c2 = factor * lL;
  return {eta, Gain::quadratic(c1), Gain::quadratic(c2)};
}

inline IossCertificate make_identical_ioss_certificate(
    const QuadraticForm& Po, const core::MatXd& L, const core::MatXd& E_x,
    const core::MatXd& E_y, double eta_tilde, double epsilon) {
  auto k = identical_lyapunov_constants(Po, L, E_x, E_y, eta_tilde, epsilon);
  return IossCertificate(Po, k.eta, k.sigma1, k.sigma2);
}

}  // namespace rompc::cert
