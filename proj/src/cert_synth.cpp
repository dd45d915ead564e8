#include "rompc/cert/synth.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

namespace rompc::cert {

MatXd solve_dare(const MatXd& A, const MatXd& B, const MatXd& Q, const MatXd& R,
                 int max_iters, double tol) {
  MatXd P = Q;
  for (int k = 0; k < max_iters; ++k) {
    const MatXd BtP = B.transpose() * P;
    const MatXd S = R + BtP * B;
    const MatXd Kk = S.ldlt().solve(BtP * A);
    const MatXd Pn =
        Q + A.transpose() * P * A - A.transpose() * P * B * Kk;
    const double delta = (Pn - P).norm() / std::max(1.0, P.norm());
    P = 0.5 * (Pn + Pn.transpose().eval());
    if (delta < tol) break;
  }
  return P;
}

MatXd dlqr_gain(const MatXd& A, const MatXd& B, const MatXd& Q, const MatXd& R) {
  const MatXd P = solve_dare(A, B, Q, R);
  const MatXd S = R + B.transpose() * P * B;
  return -S.ldlt().solve(B.transpose() * P * A);
}

MatXd kalman_gain(const MatXd& A, const MatXd& C, const MatXd& Q, const MatXd& R) {
  // Dual of dlqr: design for (A', C') and transpose back; A + L C stable.
  const MatXd Kt = dlqr_gain(A.transpose(), C.transpose(), Q, R);
  return Kt.transpose();
}

double vertex_decay(const MatXd& A, const MatXd& P) {
  Eigen::LLT<MatXd> llt(P);
  if (llt.info() != Eigen::Success)
    throw std::invalid_argument("vertex_decay: P not positive definite");
  // M = L^{-1} (A' P A) L^{-T}
  MatXd M = A.transpose() * P * A;
  M = llt.matrixL().solve(M);
  M = llt.matrixL().solve(M.transpose()).transpose();
  Eigen::SelfAdjointEigenSolver<MatXd> es(0.5 * (M + M.transpose().eval()));
  return es.eigenvalues().maxCoeff();
}

std::optional<MatXd> common_lyapunov(const std::vector<MatXd>& vertices, double rho,
                                     int max_outer) {
  if (vertices.empty()) return std::nullopt;
  const int n = static_cast<int>(vertices[0].rows());

  // Warm start: average of the per-vertex Lyapunov solutions at this rate.
  MatXd P = MatXd::Zero(n, n);
  for (const auto& A : vertices) {
    MatXd Pv = MatXd::Identity(n, n);
    const MatXd As = A / std::sqrt(rho);
    if (Eigen::EigenSolver<MatXd>(As).eigenvalues().cwiseAbs().maxCoeff() >= 0.9999)
      return std::nullopt;  // a single vertex already refuses this rate
    for (int it = 0; it < 20000; ++it) {
      MatXd Pn = MatXd::Identity(n, n) + As.transpose() * Pv * As;
      const double delta = (Pn - Pv).norm() / std::max(1.0, Pv.norm());
      Pv = 0.5 * (Pn + Pn.transpose().eval());
      if (delta < 1e-13) break;
    }
    P += Pv;
  }
  P /= static_cast<double>(vertices.size());
  P *= n / P.trace();

  // Eigenvector cutting planes: a violated vertex contributes the half-space
  // <P, (A z)(A z)' - rho z z'> <= -margin; project (over-relaxed Kaczmarz)
  // and floor the spectrum to stay inside the PSD cone.
  const double margin = 1e-7;
  const double floor_eps = 1e-8;
  const int max_iters = 40000 * std::max<int>(1, max_outer / 60);
  for (int it = 0; it < max_iters; ++it) {
    double worst = -std::numeric_limits<double>::infinity();
    MatXd W;
    for (const auto& A : vertices) {
      const MatXd S = A.transpose() * P * A - rho * P;
      Eigen::SelfAdjointEigenSolver<MatXd> es(0.5 * (S + S.transpose().eval()));
      const double lam = es.eigenvalues()(n - 1);
      if (lam > worst) {
        worst = lam;
        const VecXd z = es.eigenvectors().col(n - 1);
        const VecXd Az = A * z;
        W = Az * Az.transpose() - rho * z * z.transpose();
      }
    }
    if (worst <= 0.0) {
      // Confirm positive definiteness before accepting.
      Eigen::SelfAdjointEigenSolver<MatXd> es(P);
      if (es.eigenvalues().minCoeff() > 1e-10 * P.trace() / n) return P;
    }

    const double t = worst + margin;
    if (t > 0.0) {
      P -= 1.6 * (t / W.squaredNorm()) * W;
      P = 0.5 * (P + P.transpose().eval());
    }
    // Spectrum floor keeps P in the cone; renormalize the scale.
    Eigen::SelfAdjointEigenSolver<MatXd> es(P);
    if (es.eigenvalues().minCoeff() < floor_eps * std::max(1.0, P.trace() / n)) {
      VecXd vals = es.eigenvalues().cwiseMax(floor_eps * std::max(1.0, P.trace() / n));
      P = es.eigenvectors() * vals.asDiagonal() * es.eigenvectors().transpose();
    }
    P *= n / P.trace();
  }
  return std::nullopt;
}

std::optional<CommonLyapunovResult> common_lyapunov_bisect(
    const std::vector<MatXd>& vertices, double rho_lo, double rho_hi,
    int bisect_iters) {
  auto attempt = [&](double rho) { return common_lyapunov(vertices, rho); };
  if (!attempt(rho_hi)) return std::nullopt;
  double lo = rho_lo, hi = rho_hi;
  MatXd best_P = *attempt(rho_hi);
  for (int k = 0; k < bisect_iters; ++k) {
    const double mid = 0.5 * (lo + hi);
    if (auto P = attempt(mid)) {
      best_P = *P;
      hi = mid;
    } else {
      lo = mid;
    }
  }
  double decay = 0.0;
  for (const auto& A : vertices) decay = std::max(decay, vertex_decay(A, best_P));
  return CommonLyapunovResult{best_P, decay};
}

MatXd improve_conditioning(MatXd P, const std::vector<MatXd>& vertices,
                           double rho_keep) {
  const int n = static_cast<int>(P.rows());
  auto worst_decay = [&](const MatXd& M) {
    double d = 0.0;
    for (const auto& A : vertices) d = std::max(d, vertex_decay(A, M));
    return d;
  };
  double beta = 0.2;
  for (int it = 0; it < 400 && beta > 1e-5; ++it) {
    const MatXd target = (P.trace() / n) * MatXd::Identity(n, n);
    MatXd Ptry = (1.0 - beta) * P + beta * target;
    if (worst_decay(Ptry) <= rho_keep)
      P = std::move(Ptry);
    else
      beta *= 0.5;
  }
  return P;
}

std::vector<double> min_block_gains(const std::vector<MatXd>& A_vertices,
                                    const std::vector<MatXd>& B_blocks,
                                    const MatXd& P, double rho,
                                    const std::vector<MatXd>& Q_blocks) {
  if (B_blocks.size() != Q_blocks.size())
    throw std::invalid_argument("min_block_gains: block count mismatch");
  const int n = static_cast<int>(P.rows());
  const std::size_t m = B_blocks.size();

  std::vector<int> dims(m);
  int total = n;
  for (std::size_t i = 0; i < m; ++i) {
    dims[i] = static_cast<int>(B_blocks[i].cols());
    total += dims[i];
  }

  auto feasible = [&](const std::vector<double>& c) {
    for (const auto& A : A_vertices) {
      MatXd S(n, total);
      S.leftCols(n) = A;
      int off = n;
      for (std::size_t i = 0; i < m; ++i) {
        S.middleCols(off, dims[i]) = B_blocks[i];
        off += dims[i];
      }
      MatXd M = S.transpose() * P * S;
      M.topLeftCorner(n, n) -= rho * P;
      off = n;
      for (std::size_t i = 0; i < m; ++i) {
        M.block(off, off, dims[i], dims[i]) -= c[i] * Q_blocks[i];
        off += dims[i];
      }
      Eigen::SelfAdjointEigenSolver<MatXd> es(0.5 * (M + M.transpose().eval()));
      if (es.eigenvalues().maxCoeff() > 0.0) return false;
    }
    return true;
  };

  // Find a feasible scale along the all-ones direction, then shrink each
  // gain by bisection (a few alternating sweeps suffice: the feasible set is
  // monotone in every coordinate).
  std::vector<double> c(m, 1.0);
  double scale = 1.0;
  while (!feasible(c) && scale < 1e16) {
    scale *= 4.0;
    for (auto& ci : c) ci = scale;
  }
  if (!feasible(c))
    throw std::runtime_error("min_block_gains: no feasible gain found (rho too tight)");
  for (int sweep = 0; sweep < 3; ++sweep) {
    for (std::size_t i = 0; i < m; ++i) {
      double lo = 0.0, hi = c[i];
      for (int it = 0; it < 40; ++it) {
        const double mid = 0.5 * (lo + hi);
        std::vector<double> trial = c;
        trial[i] = mid;
        if (feasible(trial))
          hi = mid;
        else
          lo = mid;
      }
      c[i] = hi;
    }
  }
  // Small safety factor so sampled verification is clean of boundary noise.
  for (auto& ci : c) ci *= 1.0 + 1e-9;
  return c;
}

namespace {

double lambda_max_psd(const MatXd& M) {
  if (M.size() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<MatXd> es(0.5 * (M + M.transpose().eval()));
  return std::max(0.0, es.eigenvalues().maxCoeff());
}

}  // namespace

SynthesizedCertificates synthesize_linear_certificates(const LinearSynthesisInput& in) {
  if (in.A_vertices.empty())
    throw std::invalid_argument("synthesize_linear_certificates: no vertices");
  const int n = static_cast<int>(in.A_vertices[0].rows());
  const int n_w = static_cast<int>(in.E_x.cols());

  MatXd A_mid = MatXd::Zero(n, n);
  for (const auto& A : in.A_vertices) A_mid += A;
  A_mid /= static_cast<double>(in.A_vertices.size());

  SynthesizedCertificates out;
  const MatXd I_w = MatXd::Identity(n_w, n_w);

  // --- tracking feedback and delta-ISS CLF ---------------------------------
  out.K = dlqr_gain(A_mid, in.B, in.Q_lqr, in.R_lqr);
  std::vector<MatXd> cl_vertices;
  for (const auto& A : in.A_vertices) cl_vertices.push_back(A + in.B * out.K);
  auto clf_res = common_lyapunov_bisect(cl_vertices);
  if (!clf_res || clf_res->decay >= in.target_rho)
    throw std::runtime_error("synthesis: no common CLF Lyapunov matrix below target rho");
  // Leave decrease slack for the disturbance blocks, then round the matrix
  // toward the identity for better-conditioned envelopes.
  const double rho_keep = clf_res->decay + 0.5 * (in.target_rho - clf_res->decay);
  const MatXd Pd = improve_conditioning(clf_res->P, cl_vertices, rho_keep);
  out.clf_vertex_decay = 0.0;
  for (const auto& A : cl_vertices)
    out.clf_vertex_decay = std::max(out.clf_vertex_decay, vertex_decay(A, Pd));

  const double c3 =
      min_block_gains(cl_vertices, {in.E_x}, Pd, in.target_rho, {I_w})[0];
  out.clf = IssClfCertificate(QuadraticForm(Pd), in.target_rho,
                              core::Gain::quadratic(c3), out.K);

  // --- observer and its Lyapunov certificate --------------------------------
  out.L = kalman_gain(A_mid, in.C, in.Q_kal, in.R_kal);
  std::vector<MatXd> obs_vertices;
  for (const auto& A : in.A_vertices) obs_vertices.push_back(A + out.L * in.C);
  auto obs_res = common_lyapunov_bisect(obs_vertices);
  if (!obs_res || obs_res->decay >= in.target_eta_tilde)
    throw std::runtime_error(
        "synthesis: no common observer Lyapunov matrix below target eta~");
  const double eta_keep = obs_res->decay + 0.5 * (in.target_eta_tilde - obs_res->decay);
  const MatXd Po = improve_conditioning(obs_res->P, obs_vertices, eta_keep);
  out.observer_vertex_decay = 0.0;
  for (const auto& A : obs_vertices)
    out.observer_vertex_decay = std::max(out.observer_vertex_decay, vertex_decay(A, Po));

  const MatXd G = out.L * in.E_y + in.E_x;
  const double c4 =
      min_block_gains(obs_vertices, {G}, Po, in.target_eta_tilde, {I_w})[0];
  const QuadraticForm Po_form(Po);
  const MatXd LC = out.L * in.C;
  const double gl1 =
      lambda_max_psd(LC.transpose() * LC) > 0.0
          ? std::sqrt(lambda_max_psd(LC.transpose() * LC) / Po_form.lambda_min())
          : 0.0;
  const MatXd LEy = out.L * in.E_y;
  const double gl2 = std::sqrt(lambda_max_psd(LEy.transpose() * LEy));
  out.observer = ObserverCertificate(Po_form, in.target_eta_tilde,
                                     core::Gain::quadratic(c4),
                                     core::Gain(gl1, 0.5), core::Gain::linear(gl2));

  // --- detectability constants on the same quadratic form -------------------
  if (in.target_eta <= in.target_eta_tilde)
    throw std::invalid_argument("synthesis: need target_eta > target_eta_tilde");
  const double eps_ioss = in.target_eta / in.target_eta_tilde - 1.0;
  out.ioss = make_identical_ioss_certificate(Po_form, out.L, in.E_x, in.E_y,
                                             in.target_eta_tilde, eps_ioss);

  // --- tube cross-gains (joint block form, Vo-weighted error channel) -------
  {
    auto gains = min_block_gains(cl_vertices, {LC, LEy}, Pd, in.target_rho,
                                 {Po, MatXd::Identity(LEy.cols(), LEy.cols())});
    out.gamma_so = core::Gain::linear(gains[0]);
    out.gamma_sw = core::Gain::quadratic(gains[1]);
  }

  return out;
}

}  // namespace rompc::cert
