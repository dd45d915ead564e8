#include "rompc/nlp/sqp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>

#include "rompc/core/rng.hpp"
#include "rompc/nlp/qp.hpp"

namespace rompc::nlp {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Evaluation {
  double f = 0.0;
  VecXd grad_f;
  VecXd c_eq;    // values, target 0
  VecXd c_ineq;  // values, target <= 0
  MatXd J_eq;
  MatXd J_ineq;
};

void check_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw EvaluationError(std::string("non-finite ") + what);
}

double eval_value(const NlpFunction& fn, const VecXd& v, const char* what) {
  const double val = fn.value(v);
  check_finite(val, what);
  return val;
}

VecXd eval_gradient(const NlpFunction& fn, const VecXd& v, double fd_step,
                    const char* what) {
  VecXd g = fn.gradient ? fn.gradient(v) : fd_gradient(fn.value, v, fd_step);
  if (!g.allFinite()) throw EvaluationError(std::string("non-finite gradient of ") + what);
  return g;
}

Evaluation evaluate(const NlpProblem& p, const VecXd& v, double fd_step,
                    bool with_derivatives) {
  Evaluation e;
  e.f = eval_value(p.objective, v, "objective");
  const int me = static_cast<int>(p.eq_constraints.size());
  const int mi = static_cast<int>(p.ineq_constraints.size());
  e.c_eq.resize(me);
  e.c_ineq.resize(mi);
  for (int i = 0; i < me; ++i) e.c_eq[i] = eval_value(p.eq_constraints[i], v, "equality");
  for (int i = 0; i < mi; ++i)
    e.c_ineq[i] = eval_value(p.ineq_constraints[i], v, "inequality");
  if (with_derivatives) {
    e.grad_f = eval_gradient(p.objective, v, fd_step, "objective");
    e.J_eq.resize(me, p.n_vars);
    e.J_ineq.resize(mi, p.n_vars);
    for (int i = 0; i < me; ++i)
      e.J_eq.row(i) = eval_gradient(p.eq_constraints[i], v, fd_step, "equality").transpose();
    for (int i = 0; i < mi; ++i)
      e.J_ineq.row(i) =
          eval_gradient(p.ineq_constraints[i], v, fd_step, "inequality").transpose();
  }
  return e;
}

double constraint_l1(const Evaluation& e) {
  double s = 0.0;
  for (int i = 0; i < e.c_eq.size(); ++i) s += std::abs(e.c_eq[i]);
  for (int i = 0; i < e.c_ineq.size(); ++i) s += std::max(0.0, e.c_ineq[i]);
  return s;
}

double merit(const Evaluation& e, double mu) { return e.f + mu * constraint_l1(e); }

double max_eq_violation(const Evaluation& e) {
  return e.c_eq.size() ? e.c_eq.cwiseAbs().maxCoeff() : 0.0;
}
double max_ineq_violation(const Evaluation& e) {
  return e.c_ineq.size() ? std::max(0.0, e.c_ineq.maxCoeff()) : 0.0;
}

// Box rows lb - v <= d <= ub - v expressed as AI d <= bI.
void append_box_rows(const NlpProblem& p, const VecXd& v, MatXd& AI, VecXd& bI) {
  if (!p.has_bounds()) return;
  std::vector<std::pair<VecXd, double>> rows;
  for (int i = 0; i < p.n_vars; ++i) {
    if (std::isfinite(p.upper[i])) {
      VecXd r = VecXd::Zero(p.n_vars);
      r[i] = 1.0;
      rows.emplace_back(r, p.upper[i] - v[i]);
    }
    if (std::isfinite(p.lower[i])) {
      VecXd r = VecXd::Zero(p.n_vars);
      r[i] = -1.0;
      rows.emplace_back(r, v[i] - p.lower[i]);
    }
  }
  const int base = static_cast<int>(AI.rows());
  AI.conservativeResize(base + rows.size(), p.n_vars);
  bI.conservativeResize(base + rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    AI.row(base + k) = rows[k].first.transpose();
    bI[base + k] = rows[k].second;
  }
}

// Relaxation with slack variables for inconsistent linearizations.
QpResult solve_elastic_qp(const MatXd& B, const VecXd& g, const MatXd& JE,
                          const VecXd& cE, const MatXd& AI, const VecXd& bI,
                          double mu_el) {
  const int n = static_cast<int>(B.rows());
  const int me = static_cast<int>(JE.rows());
  const int mi = static_cast<int>(AI.rows());
  const int ns = 2 * me + mi;
  const int N = n + ns;
  const double sigma = 1e-4 * std::max(1.0, B.diagonal().maxCoeff());

  MatXd Bx = MatXd::Zero(N, N);
  Bx.topLeftCorner(n, n) = B;
  Bx.bottomRightCorner(ns, ns) = sigma * MatXd::Identity(ns, ns);
  VecXd gx = VecXd::Zero(N);
  gx.head(n) = g;
  gx.tail(ns).setConstant(mu_el);

  // Equalities: JE d - sp + sm = -cE.
  MatXd AEx = MatXd::Zero(me, N);
  AEx.leftCols(n) = JE;
  for (int i = 0; i < me; ++i) {
    AEx(i, n + 2 * i) = -1.0;
    AEx(i, n + 2 * i + 1) = 1.0;
  }
  const VecXd bEx = -cE;

  // Inequalities: AI d - sI <= bI and -s <= 0.
  MatXd AIx = MatXd::Zero(mi + ns, N);
  VecXd bIx = VecXd::Zero(mi + ns);
  AIx.topLeftCorner(mi, n) = AI;
  for (int i = 0; i < mi; ++i) AIx(i, n + 2 * me + i) = -1.0;
  bIx.head(mi) = bI;
  for (int k = 0; k < ns; ++k) AIx(mi + k, n + k) = -1.0;

  QpResult r = solve_qp(Bx, gx, AEx, bEx, AIx, bIx);
  if (r.feasible) {
    r.x = r.x.head(n).eval();
    if (r.eq_multipliers.size()) r.eq_multipliers = r.eq_multipliers.head(me).eval();
    if (r.ineq_multipliers.size()) r.ineq_multipliers = r.ineq_multipliers.head(mi).eval();
  }
  return r;
}

}  // namespace

VecXd fd_gradient(const std::function<double(const VecXd&)>& f, const VecXd& v,
                  double rel_step) {
  VecXd g(v.size());
  VecXd vp = v, vm = v;
  for (int i = 0; i < v.size(); ++i) {
    const double h = rel_step * std::max(1.0, std::abs(v[i]));
    vp[i] = v[i] + h;
    vm[i] = v[i] - h;
    g[i] = (f(vp) - f(vm)) / (2.0 * h);
    vp[i] = v[i];
    vm[i] = v[i];
  }
  return g;
}

double gradient_check(const NlpProblem& p, int count, std::uint64_t seed, double lo,
                      double hi) {
  core::Rng rng(seed);
  double worst = 0.0;
  std::vector<const NlpFunction*> fns;
  fns.push_back(&p.objective);
  for (const auto& c : p.eq_constraints) fns.push_back(&c);
  for (const auto& c : p.ineq_constraints) fns.push_back(&c);
  for (int k = 0; k < count; ++k) {
    VecXd v(p.n_vars);
    for (int i = 0; i < p.n_vars; ++i) v[i] = rng.uniform(lo, hi);
    if (p.has_bounds())
      v = v.cwiseMax(p.lower).cwiseMin(p.upper);
    for (const auto* fn : fns) {
      if (!fn->gradient) continue;
      const VecXd ga = fn->gradient(v);
      const VecXd gn = fd_gradient(fn->value, v, 1e-6);
      const double denom = std::max(1.0, gn.norm());
      worst = std::max(worst, (ga - gn).norm() / denom);
    }
  }
  return worst;
}

NlpSolution solve(const NlpProblem& problem, const VecXd& init, const SolveOptions& opts) {
  if (init.size() != problem.n_vars)
    throw std::invalid_argument("solve: init has wrong dimension");
  if (problem.has_bounds()) {
    for (int i = 0; i < problem.n_vars; ++i)
      if (init[i] < problem.lower[i] - 1e-9 || init[i] > problem.upper[i] + 1e-9)
        throw std::invalid_argument("solve: init outside bounds");
  }

  std::ofstream trace;
  if (!opts.trace_csv.empty()) {
    trace.open(opts.trace_csv, std::ios::app);
    trace << "iteration,merit,step_norm\n";
  }

  VecXd v = init;
  if (problem.has_bounds()) v = v.cwiseMax(problem.lower).cwiseMin(problem.upper);

  Evaluation ev = evaluate(problem, v, opts.fd_step, true);
  double mu = opts.penalty_init;

  MatXd B = MatXd::Identity(problem.n_vars, problem.n_vars);
  const double g0n = ev.grad_f.norm();
  if (g0n > 1.0) B *= g0n;

  // Accepted iterates; the best-by-merit one (at the final mu) is returned.
  std::vector<std::pair<VecXd, Evaluation>> accepted;
  accepted.emplace_back(v, ev);

  SolveStatus status = SolveStatus::iteration_limit;
  int iter = 0;
  int stalls = 0;
  const double B0_scale = B(0, 0);

  for (iter = 0; iter < opts.max_iters; ++iter) {
    // QP subproblem on the linearized model.
    MatXd AI = ev.J_ineq;
    VecXd bI = -ev.c_ineq;
    append_box_rows(problem, v, AI, bI);

    QpResult qp = solve_qp(B, ev.grad_f, ev.J_eq, -ev.c_eq, AI, bI);
    if (!qp.feasible)
      qp = solve_elastic_qp(B, ev.grad_f, ev.J_eq, ev.c_eq, AI, bI,
                            std::max(mu, 1e4));
    if (!qp.feasible) {
      status = SolveStatus::infeasible;
      break;
    }
    const VecXd d = qp.x;

    // Penalty weight must dominate the multipliers for the merit to be exact.
    double lam_max = 0.0;
    if (qp.eq_multipliers.size())
      lam_max = std::max(lam_max, qp.eq_multipliers.cwiseAbs().maxCoeff());
    if (qp.ineq_multipliers.size())
      lam_max = std::max(lam_max, qp.ineq_multipliers.cwiseAbs().maxCoeff());
    if (mu < 1.2 * lam_max)
      mu = std::max(opts.penalty_growth * mu, 1.5 * lam_max);

    const double step_norm = d.norm();
    const double viol = constraint_l1(ev);

    // KKT residual with the QP multipliers (box rows included in AI).
    VecXd r_stat = ev.grad_f;
    if (ev.J_eq.rows()) r_stat += ev.J_eq.transpose() * qp.eq_multipliers;
    if (AI.rows()) r_stat += AI.transpose() * qp.ineq_multipliers;
    const double kkt = r_stat.lpNorm<Eigen::Infinity>();
    const double kkt_scale = 1.0 + ev.grad_f.lpNorm<Eigen::Infinity>();
    const bool feasible_now =
        max_eq_violation(ev) <= opts.feas_tol && max_ineq_violation(ev) <= opts.feas_tol;
    if (feasible_now &&
        (step_norm <= opts.tol * (1.0 + v.norm()) || kkt <= 1e3 * opts.tol * kkt_scale)) {
      status = SolveStatus::converged;
      break;
    }

    // l1 merit line search along d, with a second-order correction retried at
    // the full step (curved constraints otherwise truncate every step).
    const double D = ev.grad_f.dot(d) - mu * viol;  // descent-rate bound
    const double m0 = merit(ev, mu);
    double alpha = 1.0;
    bool stepped = false;
    bool used_soc = false;
    Evaluation ev_next;
    VecXd v_next;
    for (int ls = 0; ls < 30; ++ls) {
      v_next = v + alpha * d;
      if (problem.has_bounds())
        v_next = v_next.cwiseMax(problem.lower).cwiseMin(problem.upper);
      bool eval_ok = true;
      try {
        ev_next = evaluate(problem, v_next, opts.fd_step, false);
      } catch (const EvaluationError&) {
        eval_ok = false;
      }
      const double envelope = m0 + 1e-4 * alpha * std::min(D, 0.0) + 1e-14 * std::abs(m0);
      if (eval_ok && merit(ev_next, mu) <= envelope) {
        stepped = true;
        break;
      }
      if (ls == 0 && eval_ok) {
        // Second-order correction: least-norm step cancelling the constraint
        // values at the trial point, using the Jacobians at v.
        std::vector<int> act;
        for (int i = 0; i < ev_next.c_ineq.size(); ++i)
          if (ev_next.c_ineq[i] > 0.0) act.push_back(i);
        const int rows = static_cast<int>(ev.c_eq.size()) + static_cast<int>(act.size());
        if (rows > 0) {
          MatXd Jc(rows, problem.n_vars);
          VecXd cc(rows);
          int r = 0;
          for (int i = 0; i < ev.c_eq.size(); ++i, ++r) {
            Jc.row(r) = ev.J_eq.row(i);
            cc[r] = ev_next.c_eq[i];
          }
          for (int i : act) {
            Jc.row(r) = ev.J_ineq.row(i);
            cc[r] = ev_next.c_ineq[i];
            ++r;
          }
          const MatXd JJt =
              Jc * Jc.transpose() + 1e-12 * MatXd::Identity(rows, rows);
          const VecXd d_soc = -Jc.transpose() * JJt.ldlt().solve(cc);
          VecXd v_soc = v + d + d_soc;
          if (problem.has_bounds())
            v_soc = v_soc.cwiseMax(problem.lower).cwiseMin(problem.upper);
          try {
            Evaluation ev_soc = evaluate(problem, v_soc, opts.fd_step, false);
            if (merit(ev_soc, mu) <= envelope) {
              v_next = v_soc;
              ev_next = ev_soc;
              stepped = true;
              used_soc = true;
              break;
            }
          } catch (const EvaluationError&) {
          }
        }
      }
      alpha *= 0.5;
    }
    (void)used_soc;

    if (!stepped) {
      if (++stalls >= 2) {
        status = (viol <= opts.feas_tol) ? SolveStatus::converged
                                         : SolveStatus::iteration_limit;
        break;
      }
      mu *= opts.penalty_growth;
      // A fresh curvature model often unsticks a rejected direction.
      B = B0_scale * MatXd::Identity(problem.n_vars, problem.n_vars);
      continue;
    }
    stalls = 0;

    // Derivatives at the accepted point; damped BFGS update.
    Evaluation ev_full = evaluate(problem, v_next, opts.fd_step, true);
    VecXd grad_L_old = ev.grad_f;
    VecXd grad_L_new = ev_full.grad_f;
    if (qp.eq_multipliers.size()) {
      grad_L_old += ev.J_eq.transpose() * qp.eq_multipliers;
      grad_L_new += ev_full.J_eq.transpose() * qp.eq_multipliers;
    }
    if (qp.ineq_multipliers.size()) {
      grad_L_old += ev.J_ineq.transpose() * qp.ineq_multipliers;
      grad_L_new += ev_full.J_ineq.transpose() * qp.ineq_multipliers;
    }
    const VecXd s = v_next - v;
    VecXd y = grad_L_new - grad_L_old;
    const double sBs = s.dot(B * s);
    double sy = s.dot(y);
    if (sBs > 1e-16) {
      if (sy < 0.2 * sBs) {
        const double theta = 0.8 * sBs / (sBs - sy);
        y = theta * y + (1.0 - theta) * (B * s);
        sy = s.dot(y);
      }
      if (sy > 1e-14) {
        const VecXd Bs = B * s;
        B -= (Bs * Bs.transpose()) / sBs;
        B += (y * y.transpose()) / sy;
      }
    }
    // Guard against runaway or broken curvature estimates.
    const double trB = B.trace() / problem.n_vars;
    bool reset = trB > 1e8 * B0_scale || trB < 1e-8 * B0_scale || !B.allFinite();
    if (!reset) {
      Eigen::LLT<MatXd> chol(B);
      reset = chol.info() != Eigen::Success;
    }
    if (reset) B = B0_scale * MatXd::Identity(problem.n_vars, problem.n_vars);

    v = v_next;
    ev = ev_full;
    accepted.emplace_back(v, ev);

    if (trace.is_open())
      trace << iter << ',' << merit(ev, mu) << ',' << alpha * step_norm << '\n';
    if (std::getenv("ROMPC_SQP_DEBUG"))
      std::fprintf(stderr,
                   "it=%3d |d|=%.3e alpha=%.4f mu=%.2e trB/n=%.3e soc=%d kkt=%.3e "
                   "viol=%.3e f=%.9f\n",
                   iter, step_norm, alpha, mu, B.trace() / problem.n_vars,
                   used_soc ? 1 : 0, kkt, viol, ev.f);
  }

  // Monotone-merit contract: return the accepted iterate with the smallest
  // merit at the final penalty weight (the init is always a candidate).
  std::size_t best = 0;
  double best_merit = merit(accepted[0].second, mu);
  for (std::size_t i = 1; i < accepted.size(); ++i) {
    const double mi_ = merit(accepted[i].second, mu);
    if (mi_ < best_merit) {
      best_merit = mi_;
      best = i;
    }
  }

  NlpSolution sol;
  sol.vars = accepted[best].first;
  // Feasibility honesty: re-evaluate residuals at the returned point.
  Evaluation ev_ret = evaluate(problem, sol.vars, opts.fd_step, false);
  sol.objective_value = ev_ret.f;
  sol.max_eq_violation = max_eq_violation(ev_ret);
  sol.max_ineq_violation = max_ineq_violation(ev_ret);
  sol.status = status;
  sol.iterations = iter;
  sol.merit_init = merit(accepted[0].second, mu);
  sol.merit_returned = merit(ev_ret, mu);
  if (status == SolveStatus::converged && !sol.feasible(opts.feas_tol))
    sol.status = SolveStatus::iteration_limit;
  return sol;
}

NlpSolution solve_multistart(const NlpProblem& problem, const std::vector<VecXd>& inits,
                             const SolveOptions& opts) {
  if (inits.empty()) throw std::invalid_argument("solve_multistart: no inits");
  bool have_best = false;
  NlpSolution best;
  bool have_fallback = false;
  NlpSolution fallback;
  for (const auto& raw : inits) {
    VecXd init = raw;
    if (problem.has_bounds()) init = init.cwiseMax(problem.lower).cwiseMin(problem.upper);
    NlpSolution s = solve(problem, init, opts);
    if (s.feasible(opts.feas_tol)) {
      if (!have_best || s.objective_value < best.objective_value) {
        best = s;
        have_best = true;
      }
    } else if (!have_fallback ||
               s.max_eq_violation + s.max_ineq_violation <
                   fallback.max_eq_violation + fallback.max_ineq_violation) {
      fallback = s;
      have_fallback = true;
    }
  }
  if (have_best) return best;
  fallback.status = SolveStatus::infeasible;
  return fallback;
}

}  // namespace rompc::nlp
