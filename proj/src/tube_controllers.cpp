#include "rompc/tube/controllers.hpp"

#include <memory>

namespace rompc::tube {

namespace {

using nlp::NlpFunction;
using nlp::NlpProblem;

double smooth_norm(const VecXd& v, double eps) {
  return std::sqrt(v.squaredNorm() + eps * eps);
}
VecXd smooth_norm_grad(const VecXd& v, double eps) {
  return v / std::sqrt(v.squaredNorm() + eps * eps);
}

double gain_slope(const core::Gain& g, double r) {
  return g.derivative(std::max(r, 1e-16));
}

enum class Variant { homothetic, tightened, rigid };

// ---------------------------------------------------------------------------
// Nominal-rollout transcription shared by the three controller variants.
// Decision vector: [x-_0 (homothetic only); u-_0..u-_{N-1}].
// ---------------------------------------------------------------------------
struct MpcRollout {
  std::vector<VecXd> x;       // 0..N
  std::vector<MatXd> x_sens;  // d x_k / d v
};

struct MpcTranscription {
  const TubeMpcConfig* cfg = nullptr;
  VecXd x_hat;
  double e_t = 0.0;
  Variant variant = Variant::homothetic;
  const RpiBounds* rpi = nullptr;  // rigid only
  bool rigid_pinned = false;

  int n_vars = 0;
  bool free_x0 = false;
  std::vector<double> e_seq;    // e-_k constants
  std::vector<double> off_seq;  // s-_k = rho^k s-_0 + off_k
  std::vector<double> rho_pow;

  mutable std::shared_ptr<std::pair<VecXd, MpcRollout>> memo =
      std::make_shared<std::pair<VecXd, MpcRollout>>();

  int u_offset(int k) const {
    return (free_x0 ? cfg->model->n_x : 0) + k * cfg->model->n_u;
  }

  VecXd u_at(const VecXd& v, int k) const {
    return v.segment(u_offset(k), cfg->model->n_u);
  }

  VecXd x0_of(const VecXd& v) const {
    return free_x0 ? VecXd(v.head(cfg->model->n_x)) : x_hat;
  }

  const MpcRollout& rollout(const VecXd& v) const {
    if (memo->first.size() == v.size() && memo->first == v) return memo->second;
    const auto& m = *cfg->model;
    MpcRollout r;
    r.x.resize(cfg->N + 1);
    r.x_sens.resize(cfg->N + 1);
    r.x[0] = x0_of(v);
    r.x_sens[0] = MatXd::Zero(m.n_x, n_vars);
    if (free_x0) r.x_sens[0].leftCols(m.n_x) = MatXd::Identity(m.n_x, m.n_x);
    for (int k = 0; k < cfg->N; ++k) {
      const VecXd u = u_at(v, k);
      r.x[k + 1] = m.step_nominal(r.x[k], u);
      const MatXd A = core::step_jacobian_x(m, r.x[k], u);
      const MatXd B = core::step_jacobian_u(m, r.x[k], u);
      r.x_sens[k + 1] = A * r.x_sens[k];
      r.x_sens[k + 1].middleCols(u_offset(k), m.n_u) += B;
    }
    memo->first = v;
    memo->second = std::move(r);
    return memo->second;
  }

  // s-_0 as a function of the decision vector (0 unless x-_0 is free).
  double s0(const VecXd& v) const {
    if (!free_x0) return 0.0;
    return cfg->clf.V.value(x0_of(v), x_hat);
  }
  VecXd s0_grad(const VecXd& v) const {
    VecXd g = VecXd::Zero(n_vars);
    if (free_x0) {
      const VecXd d = x0_of(v) - x_hat;
      g.head(cfg->model->n_x) = 2.0 * (cfg->clf.V.matrix() * d);
    }
    return g;
  }

  double s_at(const VecXd& v, int k) const {
    if (variant == Variant::rigid) return rpi->s_max;
    return rho_pow[k] * s0(v) + off_seq[k];
  }
  double e_at(int k) const {
    if (variant == Variant::rigid) return rpi->e_max;
    return e_seq[k];
  }

  // Tightened and rigid variants have constant scalings; only the homothetic
  // couples s- into the decision vector.
  bool s_depends_on_vars() const { return variant == Variant::homothetic; }
};

std::shared_ptr<MpcTranscription> make_transcription(const TubeMpcConfig& cfg,
                                                     const VecXd& x_hat, double e_t,
                                                     Variant variant,
                                                     const RpiBounds* rpi,
                                                     bool rigid_pinned = false) {
  auto tr = std::make_shared<MpcTranscription>();
  tr->cfg = &cfg;
  tr->x_hat = x_hat;
  tr->e_t = e_t;
  tr->variant = variant;
  tr->rpi = rpi;
  tr->rigid_pinned = rigid_pinned;
  tr->free_x0 = (variant == Variant::homothetic) ||
                (variant == Variant::rigid && !rigid_pinned);
  tr->n_vars = (tr->free_x0 ? cfg.model->n_x : 0) + cfg.N * cfg.model->n_u;

  auto [s_off, e_seq] = propagate_tube(0.0, e_t, cfg.N, cfg.gains, cfg.ocert,
                                       cfg.clf, cfg.w_bar);
  tr->e_seq = std::move(e_seq);
  tr->off_seq = std::move(s_off);  // propagation from s0 = 0 gives the offsets
  tr->rho_pow.resize(cfg.N + 1);
  double rp = 1.0;
  for (int k = 0; k <= cfg.N; ++k) {
    tr->rho_pow[k] = rp;
    rp *= cfg.clf.rho;
  }
  return tr;
}

NlpProblem build_problem(const std::shared_ptr<MpcTranscription>& tr) {
  const TubeMpcConfig& cfg = *tr->cfg;
  const auto& m = *cfg.model;
  NlpProblem p;
  p.n_vars = tr->n_vars;

  // Objective: sum_k l(x-_k, u-_k, e-_k, s-_k); terminal cost is zero in
  // equality mode and omitted in set mode (feasibility-focused formulation).
  p.objective.value = [tr, &cfg](const VecXd& v) {
    const auto& r = tr->rollout(v);
    double J = 0.0;
    for (int k = 0; k < cfg.N; ++k)
      J += cfg.cost.eval(r.x[k], tr->u_at(v, k), tr->e_at(k), tr->s_at(v, k));
    return J;
  };
  p.objective.gradient = [tr, &cfg](const VecXd& v) {
    const auto& r = tr->rollout(v);
    VecXd g = VecXd::Zero(tr->n_vars);
    const VecXd ds0 = tr->s_depends_on_vars() ? tr->s0_grad(v) : VecXd();
    for (int k = 0; k < cfg.N; ++k) {
      const VecXd u = tr->u_at(v, k);
      VecXd gx, gu;
      if (cfg.cost.l_nom_grad) {
        auto [a, b] = cfg.cost.l_nom_grad(r.x[k], u);
        gx = a;
        gu = b;
      } else {
        gx = nlp::fd_gradient([&](const VecXd& xx) { return cfg.cost.l_nom(xx, u); },
                              r.x[k], 1e-6);
        gu = nlp::fd_gradient([&](const VecXd& uu) { return cfg.cost.l_nom(r.x[k], uu); },
                              u, 1e-6);
      }
      g += r.x_sens[k].transpose() * gx;
      g.segment(tr->u_offset(k), cfg.model->n_u) += gu;
      if (tr->s_depends_on_vars() && !cfg.cost.l_s.is_zero())
        g += gain_slope(cfg.cost.l_s, tr->s_at(v, k)) * tr->rho_pow[k] * ds0;
    }
    return g;
  };

  // Tightened constraint rows g_i + sigma_s(s-_k) + sigma_o(e-_k) <= 0.
  for (int k = 0; k < cfg.N; ++k) {
    for (int i = 0; i < cfg.constraints->rows(); ++i) {
      const double sig_o = cfg.constraints->tightening_o(i).value(tr->e_at(k));
      p.ineq_constraints.push_back(NlpFunction{
          [tr, &cfg, i, k, sig_o](const VecXd& v) {
            const auto& r = tr->rollout(v);
            return cfg.constraints->row(i).g(r.x[k], tr->u_at(v, k)) +
                   cfg.constraints->tightening_s(i).value(tr->s_at(v, k)) + sig_o;
          },
          [tr, &cfg, i, k](const VecXd& v) {
            const auto& r = tr->rollout(v);
            const VecXd u = tr->u_at(v, k);
            const auto& row = cfg.constraints->row(i);
            VecXd gx = row.grad_x
                           ? row.grad_x(r.x[k], u)
                           : nlp::fd_gradient(
                                 [&](const VecXd& xx) { return row.g(xx, u); }, r.x[k],
                                 1e-6);
            VecXd gu = row.grad_u
                           ? row.grad_u(r.x[k], u)
                           : nlp::fd_gradient(
                                 [&](const VecXd& uu) { return row.g(r.x[k], uu); }, u,
                                 1e-6);
            VecXd g = r.x_sens[k].transpose() * gx;
            g.segment(tr->u_offset(k), cfg.model->n_u) += gu;
            if (tr->s_depends_on_vars()) {
              const auto& sigma_s = cfg.constraints->tightening_s(i);
              if (!sigma_s.is_zero())
                g += gain_slope(sigma_s, tr->s_at(v, k)) * tr->rho_pow[k] *
                     tr->s0_grad(v);
            }
            return g;
          }});
    }
  }

  // Free rigid variant: the initial state must sit inside the worst-case tube
  // around the estimate.
  if (tr->variant == Variant::rigid && tr->free_x0) {
    p.ineq_constraints.push_back(NlpFunction{
        [tr, &cfg](const VecXd& v) {
          return cfg.clf.V.value(tr->x0_of(v), tr->x_hat) - tr->rpi->s_max;
        },
        [tr, &cfg](const VecXd& v) {
          VecXd g = VecXd::Zero(tr->n_vars);
          const VecXd d = tr->x0_of(v) - tr->x_hat;
          g.head(cfg.model->n_x) = 2.0 * (cfg.clf.V.matrix() * d);
          return g;
        }});
  }

  // Terminal constraint.
  if (cfg.terminal.mode == TerminalIngredients::Mode::equality) {
    for (int j = 0; j < m.n_x; ++j) {
      p.eq_constraints.push_back(NlpFunction{
          [tr, &cfg, j](const VecXd& v) {
            return tr->rollout(v).x[cfg.N][j] - cfg.terminal.x_s[j];
          },
          [tr, &cfg, j](const VecXd& v) {
            return VecXd(tr->rollout(v).x_sens[cfg.N].row(j).transpose());
          }});
    }
  } else {
    p.ineq_constraints.push_back(NlpFunction{
        [tr, &cfg](const VecXd& v) {
          return cfg.clf.V.value(tr->rollout(v).x[cfg.N], cfg.terminal.x_s) -
                 cfg.terminal.c_f;
        },
        [tr, &cfg](const VecXd& v) {
          const auto& r = tr->rollout(v);
          const VecXd d = r.x[cfg.N] - cfg.terminal.x_s;
          return VecXd(2.0 * r.x_sens[cfg.N].transpose() * (cfg.clf.V.matrix() * d));
        }});
  }
  return p;
}

VecXd pack_solution(const MpcTranscription& tr, const TubeSolution& sol) {
  VecXd v(tr.n_vars);
  const auto& m = *tr.cfg->model;
  if (tr.free_x0) v.head(m.n_x) = sol.x_bar[0];
  for (int k = 0; k < tr.cfg->N; ++k) v.segment(tr.u_offset(k), m.n_u) = sol.u_bar[k];
  return v;
}

TubeSolution unpack_solution(const MpcTranscription& tr, const VecXd& v, double cost,
                             TubeSolution::Status status, nlp::SolveStatus nlp_status) {
  const TubeMpcConfig& cfg = *tr.cfg;
  TubeSolution out;
  const auto& r = tr.rollout(v);
  out.x_bar = r.x;
  out.u_bar.resize(cfg.N);
  for (int k = 0; k < cfg.N; ++k) out.u_bar[k] = tr.u_at(v, k);
  out.s_bar.resize(cfg.N + 1);
  out.e_bar.resize(cfg.N + 1);
  for (int k = 0; k <= cfg.N; ++k) {
    out.s_bar[k] = tr.s_at(v, k);
    out.e_bar[k] = tr.e_at(k);
  }
  out.cost = cost;
  out.status = status;
  out.nlp_status = nlp_status;
  return out;
}

double eval_max_violation(const NlpProblem& p, const VecXd& v) {
  double worst = 0.0;
  for (const auto& c : p.eq_constraints) worst = std::max(worst, std::abs(c.value(v)));
  for (const auto& c : p.ineq_constraints) worst = std::max(worst, c.value(v));
  return worst;
}

// Default init: roll the terminal tracking law kappa(., x_s, u_s) out from the
// estimate.
VecXd default_init(const MpcTranscription& tr) {
  const TubeMpcConfig& cfg = *tr.cfg;
  VecXd v = VecXd::Zero(tr.n_vars);
  VecXd x = tr.x_hat;
  if (tr.free_x0) v.head(cfg.model->n_x) = x;
  for (int k = 0; k < cfg.N; ++k) {
    const VecXd u = cfg.clf.kappa(x, cfg.terminal.x_s, cfg.terminal.u_s);
    v.segment(tr.u_offset(k), cfg.model->n_u) = u;
    x = cfg.model->step_nominal(x, u);
  }
  return v;
}

TubeSolution solve_variant(const TubeMpcConfig& cfg, const VecXd& x_hat, double e_t,
                           const TubeSolution* candidate, Variant variant,
                           const RpiBounds* rpi, bool rigid_pinned = false) {
  if (!cfg.model || !cfg.constraints)
    throw std::invalid_argument("tube MPC: config missing model/constraints");
  if (e_t < 0.0) throw std::invalid_argument("tube MPC: e_t >= 0");
  // The superadditive split backs the candidate argument only where the
  // scaling varies along the horizon from a pinned initial state.
  if (variant == Variant::tightened || (variant == Variant::rigid && rigid_pinned))
    cfg.constraints->require_superadditive_tightening();

  auto tr = make_transcription(cfg, x_hat, e_t, variant, rpi, rigid_pinned);
  NlpProblem p = build_problem(tr);

  std::vector<VecXd> inits;
  bool cand_ok = false;
  VecXd cand_v;
  double cand_cost = 0.0;
  if (candidate && candidate->usable() &&
      static_cast<int>(candidate->u_bar.size()) == cfg.N) {
    cand_v = pack_solution(*tr, *candidate);
    const double viol = eval_max_violation(p, cand_v);
    cand_ok = viol <= cfg.nlp.feas_tol;
    if (cand_ok) cand_cost = p.objective.value(cand_v);
    inits.push_back(cand_v);
  }
  inits.push_back(default_init(*tr));

  nlp::NlpSolution s = nlp::solve_multistart(p, inits, cfg.nlp);
  const bool solver_ok = s.feasible(cfg.nlp.feas_tol);

  if (solver_ok && (!cand_ok || s.objective_value <= cand_cost + 1e-12)) {
    return unpack_solution(*tr, s.vars, s.objective_value, TubeSolution::Status::optimal,
                           s.status);
  }
  if (cand_ok) {
    return unpack_solution(*tr, cand_v, cand_cost,
                           TubeSolution::Status::candidate_accepted, s.status);
  }
  TubeSolution out;
  out.status = TubeSolution::Status::infeasible;
  out.nlp_status = nlp::SolveStatus::infeasible;
  return out;
}

}  // namespace

StageCost quadratic_stage_cost(const VecXd& x_ref, const VecXd& u_ref, const MatXd& Q,
                               const MatXd& R, Gain l_e, Gain l_s) {
  StageCost c;
  c.l_nom = [x_ref, u_ref, Q, R](const VecXd& x, const VecXd& u) {
    const VecXd dx = x - x_ref;
    const VecXd du = u - u_ref;
    return dx.dot(Q * dx) + du.dot(R * du);
  };
  c.l_nom_grad = [x_ref, u_ref, Q, R](const VecXd& x, const VecXd& u) {
    return std::make_pair(VecXd(2.0 * Q * (x - x_ref)), VecXd(2.0 * R * (u - u_ref)));
  };
  c.l_e = std::move(l_e);
  c.l_s = std::move(l_s);
  return c;
}

TubeSolution solve_homothetic(const TubeMpcConfig& cfg, const VecXd& x_hat, double e_t,
                              const TubeSolution* candidate) {
  return solve_variant(cfg, x_hat, e_t, candidate, Variant::homothetic, nullptr);
}

TubeSolution solve_tightened(const TubeMpcConfig& cfg, const VecXd& x_hat, double e_t,
                             const TubeSolution* candidate) {
  return solve_variant(cfg, x_hat, e_t, candidate, Variant::tightened, nullptr);
}

TubeSolution solve_rigid(const TubeMpcConfig& cfg, const RpiBounds& rpi,
                         const VecXd& x_hat, const TubeSolution* candidate,
                         bool pin_x0) {
  return solve_variant(cfg, x_hat, rpi.e_max, candidate, Variant::rigid, &rpi, pin_x0);
}

TubeSolution make_shifted_candidate(const TubeMpcConfig& cfg, const TubeSolution& prev,
                                    const VecXd& x_hat_next, double e_next,
                                    bool pin_x0_to_estimate) {
  TubeSolution cand;
  if (!prev.usable() || static_cast<int>(prev.u_bar.size()) != cfg.N) return cand;
  const auto& m = *cfg.model;
  cand.u_bar.resize(cfg.N);
  cand.x_bar.resize(cfg.N + 1);

  // Terminal-law extension of the previous plan.
  const VecXd u_term = cfg.clf.kappa(prev.x_bar[cfg.N], cfg.terminal.x_s, cfg.terminal.u_s);

  if (pin_x0_to_estimate) {
    // Feedback-corrected shift used by the pinned formulations.
    cand.x_bar[0] = x_hat_next;
    for (int k = 0; k < cfg.N; ++k) {
      const VecXd u_ref = (k + 1 < cfg.N) ? prev.u_bar[k + 1] : u_term;
      const VecXd x_ref = prev.x_bar[std::min(k + 1, cfg.N)];
      cand.u_bar[k] = cfg.clf.kappa(cand.x_bar[k], x_ref, u_ref);
      cand.x_bar[k + 1] = m.step_nominal(cand.x_bar[k], cand.u_bar[k]);
    }
  } else {
    cand.x_bar[0] = prev.x_bar[1];
    for (int k = 0; k < cfg.N; ++k) {
      cand.u_bar[k] = (k + 1 < cfg.N) ? prev.u_bar[k + 1] : u_term;
      cand.x_bar[k + 1] = m.step_nominal(cand.x_bar[k], cand.u_bar[k]);
    }
  }

  const double s0 =
      pin_x0_to_estimate ? 0.0 : cfg.clf.V.value(cand.x_bar[0], x_hat_next);
  auto [s, e] = propagate_tube(s0, e_next, cfg.N, cfg.gains, cfg.ocert, cfg.clf,
                               cfg.w_bar);
  cand.s_bar = std::move(s);
  cand.e_bar = std::move(e);
  cand.cost = 0.0;
  for (int k = 0; k < cfg.N; ++k)
    cand.cost += cfg.cost.eval(cand.x_bar[k], cand.u_bar[k], cand.e_bar[k], cand.s_bar[k]);
  cand.status = TubeSolution::Status::candidate_accepted;
  return cand;
}

double candidate_violation(const TubeMpcConfig& cfg, const TubeSolution& sol,
                           const VecXd& x_hat, double e_t, bool pin_x0) {
  auto tr = make_transcription(cfg, x_hat, e_t,
                               pin_x0 ? Variant::tightened : Variant::homothetic,
                               nullptr);
  NlpProblem p = build_problem(tr);
  return eval_max_violation(p, pack_solution(*tr, sol));
}

int decision_variable_count(const TubeMpcConfig& cfg, bool pinned) {
  return (pinned ? 0 : cfg.model->n_x) + cfg.N * cfg.model->n_u;
}

// ===========================================================================
// Joint MHE-MPC
// ===========================================================================

namespace {

struct JointRollout {
  MpcRollout mpc;
  std::vector<VecXd> xe;       // MHE states x^_{-M..0}
  std::vector<VecXd> we;       // MHE noise
  std::vector<VecXd> ye;       // MHE explained outputs
  std::vector<MatXd> xe_sens;  // d x^_k / d v
  std::vector<MatXd> ye_sens;
  double E0 = 0.0;  // smoothed e-_0 expression
  VecXd dE0;
  std::vector<double> s;  // s-_0..N
  std::vector<VecXd> ds;
  std::vector<double> e;  // e-_0..N (e[0] = E0)
};

struct JointTranscription {
  const TubeMpcConfig* cfg = nullptr;
  const mhe::MheConfig* mhe_cfg = nullptr;
  const mhe::EstimationWindow* win = nullptr;
  int M = 0;
  int n_vars = 0;
  double eps = 1e-9;
  double sw = 1.0;

  mutable std::shared_ptr<std::pair<VecXd, JointRollout>> memo =
      std::make_shared<std::pair<VecXd, JointRollout>>();

  // Layout: [x-_0 (n_x) | u- (N n_u) | x^_{-M} offset chi (n_x) | omega (M n_w)].
  int u_offset(int k) const { return cfg->model->n_x + k * cfg->model->n_u; }
  int chi_offset() const { return cfg->model->n_x + cfg->N * cfg->model->n_u; }
  int noise_offset(int k) const { return chi_offset() + cfg->model->n_x + k * cfg->model->n_w; }

  const JointRollout& rollout(const VecXd& v) const {
    if (memo->first.size() == v.size() && memo->first == v) return memo->second;
    const auto& m = *cfg->model;
    JointRollout r;

    // MPC chain.
    r.mpc.x.resize(cfg->N + 1);
    r.mpc.x_sens.resize(cfg->N + 1);
    r.mpc.x[0] = v.head(m.n_x);
    r.mpc.x_sens[0] = MatXd::Zero(m.n_x, n_vars);
    r.mpc.x_sens[0].leftCols(m.n_x) = MatXd::Identity(m.n_x, m.n_x);
    for (int k = 0; k < cfg->N; ++k) {
      const VecXd u = v.segment(u_offset(k), m.n_u);
      r.mpc.x[k + 1] = m.step_nominal(r.mpc.x[k], u);
      const MatXd A = core::step_jacobian_x(m, r.mpc.x[k], u);
      const MatXd B = core::step_jacobian_u(m, r.mpc.x[k], u);
      r.mpc.x_sens[k + 1] = A * r.mpc.x_sens[k];
      r.mpc.x_sens[k + 1].middleCols(u_offset(k), m.n_u) += B;
    }

    // MHE chain.
    r.xe.resize(M + 1);
    r.we.resize(M);
    r.ye.resize(M);
    r.xe_sens.resize(M + 1);
    r.ye_sens.resize(M);
    r.xe[0] = win->anchor_x_hat + v.segment(chi_offset(), m.n_x);
    r.xe_sens[0] = MatXd::Zero(m.n_x, n_vars);
    r.xe_sens[0].middleCols(chi_offset(), m.n_x) = MatXd::Identity(m.n_x, m.n_x);
    for (int k = 0; k < M; ++k) {
      const VecXd& u = win->records[k].first;
      r.we[k] = sw * v.segment(noise_offset(k), m.n_w);
      MatXd dw = MatXd::Zero(m.n_w, n_vars);
      dw.middleCols(noise_offset(k), m.n_w) = sw * MatXd::Identity(m.n_w, m.n_w);
      r.ye[k] = m.output_nominal(r.xe[k], u) + m.E_y * r.we[k];
      MatXd H;
      if (m.output_jac_x) {
        H = m.output_jac_x(r.xe[k], u);
      } else {
        H.resize(m.n_y, m.n_x);
        VecXd xp = r.xe[k], xm = r.xe[k];
        for (int j = 0; j < m.n_x; ++j) {
          const double h = 1e-6 * std::max(1.0, std::abs(r.xe[k][j]));
          xp[j] += h;
          xm[j] -= h;
          H.col(j) = (m.output_nominal(xp, u) - m.output_nominal(xm, u)) / (2 * h);
          xp[j] = r.xe[k][j];
          xm[j] = r.xe[k][j];
        }
      }
      r.ye_sens[k] = H * r.xe_sens[k] + m.E_y * dw;
      r.xe[k + 1] = m.step_nominal(r.xe[k], u) + m.E_x * r.we[k];
      const MatXd A = core::step_jacobian_x(m, r.xe[k], u);
      r.xe_sens[k + 1] = A * r.xe_sens[k] + m.E_x * dw;
    }

    // e-_0 expression (over-smoothed norms keep the tube sound).
    const auto& mc = *mhe_cfg;
    r.E0 = 0.0;
    r.dE0 = VecXd::Zero(n_vars);
    for (int k = 0; k < M; ++k) {
      const double disc = std::pow(mc.eta, M - k - 1);
      const double nw = smooth_norm(r.we[k], eps);
      r.E0 += disc * mc.sigma1.value(cfg->w_bar + nw);
      r.dE0.segment(noise_offset(k), m.n_w) +=
          disc * mc.sigma1.derivative(cfg->w_bar + nw) * sw *
          smooth_norm_grad(r.we[k], eps);
      const VecXd resid = r.ye[k] - win->records[k].second;
      const double ny = smooth_norm(resid, eps);
      r.E0 += disc * mc.sigma2.value(ny);
      r.dE0 += disc * gain_slope(mc.sigma2, ny) *
               (r.ye_sens[k].transpose() * smooth_norm_grad(resid, eps));
    }
    const double etaM = std::pow(mc.eta, M);
    const VecXd da = r.xe[0] - win->anchor_x_hat;
    const double na = smooth_norm(da, eps);
    r.E0 += etaM * (mc.sigma_delta.value(na) + win->anchor_e_bar);
    r.dE0.segment(chi_offset(), m.n_x) +=
        etaM * gain_slope(mc.sigma_delta, na) * smooth_norm_grad(da, eps);

    // Scaling sequences e-_k, s-_k and their gradients.
    const auto& oc = cfg->ocert;
    r.e.resize(cfg->N + 1);
    r.s.resize(cfg->N + 1);
    r.ds.resize(cfg->N + 1);
    double eta_pow = 1.0;
    for (int k = 0; k <= cfg->N; ++k) {
      r.e[k] = (1.0 - eta_pow) / (1.0 - oc.eta_tilde) * oc.sigma4.value(cfg->w_bar) +
               eta_pow * r.E0;
      eta_pow *= oc.eta_tilde;
    }
    const VecXd d0 = r.mpc.x[0] - r.xe[M];
    r.s[0] = d0.dot(cfg->clf.V.matrix() * d0);
    r.ds[0] = 2.0 * ((r.mpc.x_sens[0] - r.xe_sens[M]).transpose() *
                     (cfg->clf.V.matrix() * d0));
    eta_pow = 1.0;
    for (int k = 0; k < cfg->N; ++k) {
      r.s[k + 1] = cfg->clf.rho * r.s[k] + cfg->gains.gamma_so.value(r.e[k]) +
                   cfg->gains.gamma_sw.value(cfg->w_bar);
      r.ds[k + 1] = cfg->clf.rho * r.ds[k] +
                    gain_slope(cfg->gains.gamma_so, r.e[k]) * eta_pow * r.dE0;
      eta_pow *= oc.eta_tilde;
    }

    memo->first = v;
    memo->second = std::move(r);
    return memo->second;
  }
};

}  // namespace

JointResult solve_mhe_mpc(const TubeMpcConfig& cfg, const mhe::MheConfig& mhe_cfg,
                          const obs::LuenbergerObserver& observer,
                          const obs::EstimatorState& st,
                          const mhe::EstimationWindow& window, double V_bar,
                          const TubeSolution* candidate) {
  const auto& m = *cfg.model;
  JointResult out;

  const int M = window.length();
  const bool window_ready = (M >= mhe_cfg.M);

  if (window_ready) {
    auto tr = std::make_shared<JointTranscription>();
    tr->cfg = &cfg;
    tr->mhe_cfg = &mhe_cfg;
    tr->win = &window;
    tr->M = M;
    tr->sw = std::max(cfg.w_bar, 1e-9);
    tr->eps = std::max(1e-9, 1e-3 * cfg.w_bar);
    tr->n_vars = m.n_x + cfg.N * m.n_u + m.n_x + M * m.n_w;

    NlpProblem p;
    p.n_vars = tr->n_vars;
    p.objective.value = [tr, &cfg](const VecXd& v) {
      const auto& r = tr->rollout(v);
      double J = 0.0;
      for (int k = 0; k < cfg.N; ++k)
        J += cfg.cost.eval(r.mpc.x[k], v.segment(tr->u_offset(k), cfg.model->n_u),
                           r.e[k], r.s[k]);
      return J;
    };
    p.objective.gradient = [tr, &cfg](const VecXd& v) {
      const auto& r = tr->rollout(v);
      VecXd g = VecXd::Zero(tr->n_vars);
      double eta_pow = 1.0;
      for (int k = 0; k < cfg.N; ++k) {
        const VecXd u = v.segment(tr->u_offset(k), cfg.model->n_u);
        VecXd gx, gu;
        if (cfg.cost.l_nom_grad) {
          auto [a, b] = cfg.cost.l_nom_grad(r.mpc.x[k], u);
          gx = a;
          gu = b;
        } else {
          gx = nlp::fd_gradient(
              [&](const VecXd& xx) { return cfg.cost.l_nom(xx, u); }, r.mpc.x[k], 1e-6);
          gu = nlp::fd_gradient(
              [&](const VecXd& uu) { return cfg.cost.l_nom(r.mpc.x[k], uu); }, u, 1e-6);
        }
        g += r.mpc.x_sens[k].transpose() * gx;
        g.segment(tr->u_offset(k), cfg.model->n_u) += gu;
        if (!cfg.cost.l_e.is_zero())
          g += gain_slope(cfg.cost.l_e, r.e[k]) * eta_pow * r.dE0;
        if (!cfg.cost.l_s.is_zero()) g += gain_slope(cfg.cost.l_s, r.s[k]) * r.ds[k];
        eta_pow *= cfg.ocert.eta_tilde;
      }
      return g;
    };

    for (int k = 0; k < cfg.N; ++k) {
      for (int i = 0; i < cfg.constraints->rows(); ++i) {
        p.ineq_constraints.push_back(NlpFunction{
            [tr, &cfg, i, k](const VecXd& v) {
              const auto& r = tr->rollout(v);
              return cfg.constraints->row(i).g(
                         r.mpc.x[k], v.segment(tr->u_offset(k), cfg.model->n_u)) +
                     cfg.constraints->tightening_s(i).value(r.s[k]) +
                     cfg.constraints->tightening_o(i).value(r.e[k]);
            },
            [tr, &cfg, i, k](const VecXd& v) {
              const auto& r = tr->rollout(v);
              const VecXd u = v.segment(tr->u_offset(k), cfg.model->n_u);
              const auto& row = cfg.constraints->row(i);
              VecXd gx = row.grad_x ? row.grad_x(r.mpc.x[k], u)
                                    : nlp::fd_gradient(
                                          [&](const VecXd& xx) { return row.g(xx, u); },
                                          r.mpc.x[k], 1e-6);
              VecXd gu = row.grad_u ? row.grad_u(r.mpc.x[k], u)
                                    : nlp::fd_gradient(
                                          [&](const VecXd& uu) { return row.g(r.mpc.x[k], uu); },
                                          u, 1e-6);
              VecXd g = r.mpc.x_sens[k].transpose() * gx;
              g.segment(tr->u_offset(k), cfg.model->n_u) += gu;
              const auto& ss = cfg.constraints->tightening_s(i);
              if (!ss.is_zero()) g += gain_slope(ss, r.s[k]) * r.ds[k];
              const auto& so = cfg.constraints->tightening_o(i);
              if (!so.is_zero())
                g += gain_slope(so, r.e[k]) * std::pow(cfg.ocert.eta_tilde, k) * r.dE0;
              return g;
            }});
      }
    }
    if (cfg.terminal.mode == TerminalIngredients::Mode::equality) {
      for (int j = 0; j < m.n_x; ++j) {
        p.eq_constraints.push_back(NlpFunction{
            [tr, &cfg, j](const VecXd& v) {
              return tr->rollout(v).mpc.x[cfg.N][j] - cfg.terminal.x_s[j];
            },
            [tr, &cfg, j](const VecXd& v) {
              return VecXd(tr->rollout(v).mpc.x_sens[cfg.N].row(j).transpose());
            }});
      }
    } else {
      p.ineq_constraints.push_back(NlpFunction{
          [tr, &cfg](const VecXd& v) {
            return cfg.clf.V.value(tr->rollout(v).mpc.x[cfg.N], cfg.terminal.x_s) -
                   cfg.terminal.c_f;
          },
          [tr, &cfg](const VecXd& v) {
            const auto& r = tr->rollout(v);
            const VecXd d = r.mpc.x[cfg.N] - cfg.terminal.x_s;
            return VecXd(2.0 * r.mpc.x_sens[cfg.N].transpose() *
                         (cfg.clf.V.matrix() * d));
          }});
    }

    // Inits: shifted candidate for the control block, anchor replay for the
    // estimation block; plus a terminal-law rollout.
    std::vector<VecXd> inits;
    auto pack = [&](const TubeSolution* cand) {
      VecXd v = VecXd::Zero(tr->n_vars);
      if (cand && cand->usable() && static_cast<int>(cand->u_bar.size()) == cfg.N) {
        v.head(m.n_x) = cand->x_bar[0];
        for (int k = 0; k < cfg.N; ++k)
          v.segment(tr->u_offset(k), m.n_u) = cand->u_bar[k];
      } else {
        VecXd x = st.x_hat;
        v.head(m.n_x) = x;
        for (int k = 0; k < cfg.N; ++k) {
          const VecXd u = cfg.clf.kappa(x, cfg.terminal.x_s, cfg.terminal.u_s);
          v.segment(tr->u_offset(k), m.n_u) = u;
          x = m.step_nominal(x, u);
        }
      }
      return v;
    };
    if (candidate) inits.push_back(pack(candidate));
    inits.push_back(pack(nullptr));

    nlp::NlpSolution s = nlp::solve_multistart(p, inits, cfg.nlp);
    if (s.feasible(cfg.nlp.feas_tol) && s.objective_value <= V_bar + 1e-9) {
      const auto& r = tr->rollout(s.vars);
      out.joint_branch = true;
      out.value = s.objective_value;
      out.nlp_status = s.status;
      out.x_hat = r.xe[M];
      // Exact radius expression at the returned point.
      double e0 = 0.0;
      for (int k = 0; k < M; ++k) {
        const double disc = std::pow(mhe_cfg.eta, M - k - 1);
        e0 += disc * mhe_cfg.sigma1.value(cfg.w_bar + r.we[k].norm());
        e0 += disc * mhe_cfg.sigma2.value((r.ye[k] - window.records[k].second).norm());
      }
      e0 += std::pow(mhe_cfg.eta, M) *
            (window.anchor_e_bar +
             mhe_cfg.sigma_delta.value((r.xe[0] - window.anchor_x_hat).norm()));
      out.e_bar = e0;

      TubeSolution sol;
      sol.x_bar = r.mpc.x;
      sol.u_bar.resize(cfg.N);
      for (int k = 0; k < cfg.N; ++k) sol.u_bar[k] = s.vars.segment(tr->u_offset(k), m.n_u);
      sol.s_bar = r.s;
      sol.e_bar = r.e;
      sol.cost = s.objective_value;
      sol.status = TubeSolution::Status::optimal;
      sol.nlp_status = s.status;
      out.solution = std::move(sol);

      // Estimator bookkeeping: advance the observer history from the previous
      // estimate, then overwrite with the jointly estimated state.
      const auto& rec = window.records.back();
      out.state = obs::observer_step(observer, st, rec.first, rec.second);
      out.state.x_hat = out.x_hat;
      out.state.e_bar = out.e_bar;
      return out;
    }
  }

  // Fallback: Luenberger update + homothetic MPC.
  const auto& rec = window.records.back();
  obs::EstimatorState luen = obs::observer_step(observer, st, rec.first, rec.second);
  const obs::HistoryRecord& newest = luen.newest();
  const double ioss_branch = mhe_cfg.eta * st.e_bar +
                             mhe_cfg.sigma1.value(cfg.w_bar + newest.w_hat.norm()) +
                             mhe_cfg.sigma2.value((newest.y_hat - newest.y).norm());
  const double obs_branch =
      cfg.ocert.eta_tilde * st.e_bar + cfg.ocert.sigma4.value(cfg.w_bar);
  luen.e_bar = std::min(obs_branch, ioss_branch);

  TubeSolution sol = solve_homothetic(cfg, luen.x_hat, luen.e_bar, candidate);
  out.joint_branch = false;
  out.solution = sol;
  out.x_hat = luen.x_hat;
  out.e_bar = luen.e_bar;
  out.value = sol.cost;
  out.nlp_status = sol.nlp_status;
  out.state = std::move(luen);
  return out;
}

}  // namespace rompc::tube
