#pragma once

#include <optional>
#include <vector>

#include "rompc/cert/certificates.hpp"
#include "rompc/core/model.hpp"

namespace rompc::cert {

using core::MatXd;
using core::VecXd;

// ============================================================================
// Offline certificate synthesis for LPV-embedded linear(ized) dynamics
// ============================================================================
// The nonlinearity is gridded into vertex matrices A_v; a quadratic form that
// decreases at every vertex decreases for the whole family (X -> X'PX is
// matrix convex).  The decrease rates are then split against the disturbance
// channels to land the requested certificate decays exactly.

// Discrete-time algebraic Riccati equation by fixed-point iteration.
MatXd solve_dare(const MatXd& A, const MatXd& B, const MatXd& Q, const MatXd& R,
                 int max_iters = 20000, double tol = 1e-12);

// LQR gain for x+ = A x + B u minimizing sum x'Qx + u'Ru; returns K with
// A + B K stable (u = K x convention).
MatXd dlqr_gain(const MatXd& A, const MatXd& B, const MatXd& Q, const MatXd& R);

// Kalman-style observer gain L with A + L C stable.
MatXd kalman_gain(const MatXd& A, const MatXd& C, const MatXd& Q, const MatXd& R);

// Largest generalized eigenvalue of (A' P A, P).
double vertex_decay(const MatXd& A, const MatXd& P);

// Common quadratic Lyapunov matrix P with A_v' P A_v <= rho P at every vertex,
// found by weighted Lyapunov fixed-point iteration; nullopt when the iteration
// fails at this rho.
std::optional<MatXd> common_lyapunov(const std::vector<MatXd>& vertices, double rho,
                                     int max_outer = 60);

struct CommonLyapunovResult {
  MatXd P;
  double decay;  // max vertex generalized eigenvalue achieved
};

// Bisects on the decay rate to find (near-)smallest rho for which a common P
// exists, then reports the achieved per-vertex decay.
std::optional<CommonLyapunovResult> common_lyapunov_bisect(
    const std::vector<MatXd>& vertices, double rho_lo = 0.05, double rho_hi = 0.9999,
    int bisect_iters = 24);

// Shrinks P toward (tr P / n) I while every vertex decay stays <= rho_keep;
// better conditioning tightens every eigenvalue-envelope constant downstream.
MatXd improve_conditioning(MatXd P, const std::vector<MatXd>& vertices,
                           double rho_keep);

// Smallest scalars (c_1, .., c_m) such that for every vertex
//   [A_v B_1 .. B_m]' P [A_v B_1 .. B_m]  <=  diag(rho P, c_1 Q_1, .., c_m Q_m).
// Exact block form of the dissipation inequalities; no triangle-inequality or
// epsilon-splitting slack.
std::vector<double> min_block_gains(const std::vector<MatXd>& A_vertices,
                                    const std::vector<MatXd>& B_blocks,
                                    const MatXd& P, double rho,
                                    const std::vector<MatXd>& Q_blocks);

// Full bundle for a plant with vertex dynamics x+ = A(theta) x + B u + E_x w,
// y = C x + E_y w.
struct LinearSynthesisInput {
  std::vector<MatXd> A_vertices;
  MatXd B, C, E_x, E_y;
  MatXd Q_lqr, R_lqr;  // LQR weights
  MatXd Q_kal, R_kal;  // observer design weights
  double target_rho = 0.96;        // reported CLF decay (value units)
  double target_eta_tilde = 0.957; // reported observer decay
  double target_eta = 0.96;        // reported detectability decay
};

struct SynthesizedCertificates {
  MatXd K;  // tracking feedback, kappa = u- + K (x^ - x-)
  MatXd L;  // output injection
  IssClfCertificate clf;
  ObserverCertificate observer;
  IossCertificate ioss;
  // Tube cross-gains from the joint vertex analysis (tighter than composing
  // the injection bound): gamma_so linear in Vo, gamma_sw quadratic in |w|.
  core::Gain gamma_so;
  core::Gain gamma_sw;
  double clf_vertex_decay = 0.0;
  double observer_vertex_decay = 0.0;
};

SynthesizedCertificates synthesize_linear_certificates(const LinearSynthesisInput& in);

}  // namespace rompc::cert
