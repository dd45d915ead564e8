#pragma once

// Shared builders for the unit and acceptance suites: small linear models with
// synthesized certificates, used wherever a valid observer setup is needed.

#include "rompc/cert/synth.hpp"
#include "rompc/core/model.hpp"
#include "rompc/core/rng.hpp"
#include "rompc/obs/luenberger.hpp"

namespace testsys {

using rompc::core::MatXd;
using rompc::core::PlantModel;
using rompc::core::Rng;
using rompc::core::VecXd;

struct LinearSystem {
  PlantModel model;
  MatXd A, B, C;
  rompc::cert::SynthesizedCertificates certs;
};

inline PlantModel make_linear_model(const MatXd& A, const MatXd& B, const MatXd& C,
                                    const MatXd& E_x, const MatXd& E_y, double w_bar) {
  PlantModel m;
  m.n_x = static_cast<int>(A.rows());
  m.n_u = static_cast<int>(B.cols());
  m.n_y = static_cast<int>(C.rows());
  m.n_w = static_cast<int>(E_x.cols());
  m.step_nominal = [A, B](const VecXd& x, const VecXd& u) { return VecXd(A * x + B * u); };
  m.output_nominal = [C](const VecXd& x, const VecXd&) { return VecXd(C * x); };
  m.E_x = E_x;
  m.E_y = E_y;
  m.w_bound = w_bar;
  m.step_jac_x = [A](const VecXd&, const VecXd&) { return A; };
  m.step_jac_u = [B](const VecXd&, const VecXd&) { return B; };
  m.output_jac_x = [C](const VecXd&, const VecXd&) { return C; };
  return m;
}

// Random detectable/stabilizable affine-in-w system with certificates from
// the synthesis pipeline (which certifies by construction for one vertex).
inline LinearSystem random_affine_system(std::uint64_t seed, double w_bar = 0.05) {
  Rng rng(seed);
  const int n = 2 + static_cast<int>(rng.uniform01() * 2);  // 2..3 states
  const int p = 1 + static_cast<int>(rng.uniform01() * 2);  // 1..2 outputs
  const int nu = 1;
  const int q = n + p;  // disturbance on every state plus measurement noise

  MatXd A(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) A(i, j) = rng.normal();
  // Scale to a mildly stable spectral radius so the Kalman/LQR designs have
  // easy work and the synthesized decays leave slack.
  const double sr = Eigen::EigenSolver<MatXd>(A).eigenvalues().cwiseAbs().maxCoeff();
  A *= 0.7 / std::max(sr, 0.3);
  MatXd B(n, nu);
  for (int i = 0; i < n; ++i) B(i, 0) = rng.normal();
  MatXd C(p, n);
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < n; ++j) C(i, j) = rng.normal();

  MatXd E_x = MatXd::Zero(n, q);
  E_x.leftCols(n) = 0.5 * MatXd::Identity(n, n);
  MatXd E_y = MatXd::Zero(p, q);
  E_y.rightCols(p) = 0.8 * MatXd::Identity(p, p);

  rompc::cert::LinearSynthesisInput in;
  in.A_vertices = {A};
  in.B = B;
  in.C = C;
  in.E_x = E_x;
  in.E_y = E_y;
  in.Q_lqr = MatXd::Identity(n, n);
  in.R_lqr = MatXd::Identity(nu, nu);
  in.Q_kal = MatXd::Identity(n, n);
  in.R_kal = MatXd::Identity(p, p);

  LinearSystem sys;
  sys.A = A;
  sys.B = B;
  sys.C = C;
  sys.certs = rompc::cert::synthesize_linear_certificates(in);
  sys.model = make_linear_model(A, B, C, E_x, E_y, w_bar);
  return sys;
}

}  // namespace testsys
