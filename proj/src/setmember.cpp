#include "rompc/setm/setmember.hpp"

#include <Eigen/Dense>
#include <memory>

#include "rompc/core/rng.hpp"
#include "rompc/errors.hpp"

namespace rompc::setm {

namespace {

using nlp::NlpFunction;
using nlp::NlpProblem;

int matrix_rank(const MatXd& M) {
  if (M.size() == 0) return 0;
  Eigen::JacobiSVD<MatXd> svd(M);
  const double smax = svd.singularValues().size() ? svd.singularValues()(0) : 0.0;
  int r = 0;
  for (int i = 0; i < svd.singularValues().size(); ++i)
    if (svd.singularValues()(i) > 1e-10 * std::max(1.0, smax)) ++r;
  return r;
}

// ---------------------------------------------------------------------------
// Transcriptions.  Three parameterizations of the same program, picked by the
// rank structure of the disturbance channels:
//  * full elimination: [E_x; E_y] has full row rank -> decision variables are
//    the trajectory states (multiple shooting); each step's noise is the
//    least-squares solution of the stacked defect equations plus optional
//    null-space freedom.  Fat feasible set, benign geometry.
//  * measurement elimination: E_y full row rank -> single shooting over the
//    initial state and the dynamic noise; output rows solved for the noise.
//  * explicit: output matching kept as equality constraints.
// ---------------------------------------------------------------------------

enum class Mode { full_elim, meas_elim, with_equalities };

struct Rollout {
  std::vector<VecXd> x;       // x-_{-M..0}
  std::vector<VecXd> w;       // per-step noise
  std::vector<MatXd> x_sens;  // d x_k / d z
  std::vector<MatXd> w_sens;  // d w_k / d z
};

struct Transcription {
  const PlantModel* model = nullptr;
  const MembershipWindow* win = nullptr;
  Mode mode = Mode::with_equalities;

  MatXd W_pinv;  // full_elim: (n_w x (n_x+n_y)) least-squares solve of [Ex;Ey]
  MatXd W_null;  // full_elim: null-space basis of the stacked map
  MatXd Ey_pinv;
  MatXd Ny;

  int n_free = 0;      // free noise directions per step
  double sx = 1.0;     // state-variable scale
  double sw = 1.0;     // noise-variable scale
  int n_vars = 0;
  std::vector<VecXd> x_ref;  // state references (full_elim)

  mutable std::shared_ptr<std::pair<VecXd, Rollout>> memo =
      std::make_shared<std::pair<VecXd, Rollout>>();

  int state_offset(int k) const { return k * model->n_x; }  // full_elim, k in 0..M
  int noise_offset(int k) const {
    const int base = mode == Mode::full_elim ? (win->M + 1) * model->n_x : model->n_x;
    return base + k * n_free;
  }

  MatXd output_jac(const VecXd& x, const VecXd& u) const {
    if (model->output_jac_x) return model->output_jac_x(x, u);
    MatXd H(model->n_y, model->n_x);
    VecXd xp = x, xm = x;
    for (int j = 0; j < model->n_x; ++j) {
      const double h = 1e-6 * std::max(1.0, std::abs(x[j]));
      xp[j] = x[j] + h;
      xm[j] = x[j] - h;
      H.col(j) = (model->output_nominal(xp, u) - model->output_nominal(xm, u)) / (2 * h);
      xp[j] = x[j];
      xm[j] = x[j];
    }
    return H;
  }

  const Rollout& rollout(const VecXd& z) const {
    if (memo->first.size() == z.size() && memo->first == z) return memo->second;
    const int M = win->M;
    const int n_x = model->n_x;
    Rollout r;
    r.x.resize(M + 1);
    r.w.resize(M);
    r.x_sens.resize(M + 1);
    r.w_sens.resize(M);

    if (mode == Mode::full_elim) {
      for (int k = 0; k <= M; ++k) {
        r.x[k] = x_ref[k] + sx * z.segment(state_offset(k), n_x);
        r.x_sens[k] = MatXd::Zero(n_x, n_vars);
        r.x_sens[k].middleCols(state_offset(k), n_x) = sx * MatXd::Identity(n_x, n_x);
      }
      for (int k = 0; k < M; ++k) {
        const auto& [u, y] = win->records[k];
        VecXd defect(n_x + model->n_y);
        defect.head(n_x) = r.x[k + 1] - model->step_nominal(r.x[k], u);
        defect.tail(model->n_y) = y - model->output_nominal(r.x[k], u);
        r.w[k] = W_pinv * defect;
        const MatXd A = core::step_jacobian_x(*model, r.x[k], u);
        const MatXd H = output_jac(r.x[k], u);
        MatXd ddefect(n_x + model->n_y, n_vars);
        ddefect.topRows(n_x) = r.x_sens[k + 1] - A * r.x_sens[k];
        ddefect.bottomRows(model->n_y) = -H * r.x_sens[k];
        r.w_sens[k] = W_pinv * ddefect;
        if (n_free > 0) {
          r.w[k] += W_null * (sw * z.segment(noise_offset(k), n_free));
          r.w_sens[k].middleCols(noise_offset(k), n_free) += sw * W_null;
        }
      }
    } else {
      r.x[0] = win->anchor_x_hat + sx * z.head(n_x);
      r.x_sens[0] = MatXd::Zero(n_x, n_vars);
      r.x_sens[0].leftCols(n_x) = sx * MatXd::Identity(n_x, n_x);
      for (int k = 0; k < M; ++k) {
        const auto& [u, y] = win->records[k];
        MatXd dw = MatXd::Zero(model->n_w, n_vars);
        if (mode == Mode::meas_elim) {
          const VecXd h = model->output_nominal(r.x[k], u);
          r.w[k] = Ey_pinv * (y - h);
          const MatXd H = output_jac(r.x[k], u);
          dw = -Ey_pinv * H * r.x_sens[k];
          if (n_free > 0) {
            r.w[k] += Ny * (sw * z.segment(noise_offset(k), n_free));
            dw.middleCols(noise_offset(k), n_free) += sw * Ny;
          }
        } else {
          r.w[k] = sw * z.segment(noise_offset(k), n_free);
          dw.middleCols(noise_offset(k), n_free) = sw * MatXd::Identity(n_free, n_free);
        }
        r.w_sens[k] = dw;
        r.x[k + 1] = model->step_nominal(r.x[k], u) + model->E_x * r.w[k];
        const MatXd A = core::step_jacobian_x(*model, r.x[k], u);
        r.x_sens[k + 1] = A * r.x_sens[k] + model->E_x * dw;
      }
    }
    memo->first = z;
    memo->second = std::move(r);
    return memo->second;
  }
};

}  // namespace

MembershipResult solve_membership(const PlantModel& model, const MembershipWindow& win,
                                  const QuadraticForm& Vo, const VecXd& x_hat_t,
                                  double w_bar, const MembershipOptions& opts) {
  model.check_dims();
  if (win.M < 1 || static_cast<int>(win.records.size()) != win.M)
    throw std::invalid_argument("solve_membership: window must hold M records");
  if (win.anchor_e_bar < 0.0)
    throw std::invalid_argument("solve_membership: anchor radius >= 0");

  auto tr = std::make_shared<Transcription>();
  tr->model = &model;
  tr->win = &win;

  // Pick the parameterization from the channel ranks.
  MatXd stacked(model.n_x + model.n_y, model.n_w);
  stacked.topRows(model.n_x) = model.E_x;
  stacked.bottomRows(model.n_y) = model.E_y;
  const int stacked_rank = matrix_rank(stacked);
  const int ey_rank = matrix_rank(model.E_y);
  if (stacked_rank == model.n_x + model.n_y) {
    tr->mode = Mode::full_elim;
    Eigen::CompleteOrthogonalDecomposition<MatXd> cod(stacked);
    tr->W_pinv = cod.pseudoInverse();
    tr->n_free = model.n_w - stacked_rank;
    if (tr->n_free > 0) {
      Eigen::JacobiSVD<MatXd> svd(stacked, Eigen::ComputeFullV);
      tr->W_null = svd.matrixV().rightCols(tr->n_free);
    }
  } else if (ey_rank == model.n_y && model.n_y > 0) {
    tr->mode = Mode::meas_elim;
    tr->Ey_pinv = model.E_y.transpose() *
                  (model.E_y * model.E_y.transpose())
                      .ldlt()
                      .solve(MatXd::Identity(model.n_y, model.n_y));
    tr->n_free = model.n_w - model.n_y;
    if (tr->n_free > 0) {
      Eigen::JacobiSVD<MatXd> svd(model.E_y, Eigen::ComputeFullV);
      tr->Ny = svd.matrixV().rightCols(tr->n_free);
    }
  } else {
    tr->mode = Mode::with_equalities;
    tr->n_free = model.n_w;
  }

  const double anchor_radius =
      std::sqrt(std::max(win.anchor_e_bar, 1e-12) / Vo.lambda_min());
  tr->sx = std::max(anchor_radius, 1e-9);
  tr->sw = std::max(w_bar, 1e-9);

  if (tr->mode == Mode::full_elim) {
    tr->n_vars = (win.M + 1) * model.n_x + win.M * tr->n_free;
    // Reference trajectory: replay rollout when available, else the nominal
    // anchor rollout; state scale widens with the reachable drift.
    tr->x_ref.resize(win.M + 1);
    tr->x_ref[0] = win.anchor_x_hat;
    for (int k = 0; k < win.M; ++k) {
      const auto& [u, y] = win.records[k];
      VecXd w = VecXd::Zero(model.n_w);
      if (k < static_cast<int>(win.replay_w.size()) &&
          win.replay_w[k].size() == model.n_w)
        w = win.replay_w[k];
      tr->x_ref[k + 1] = core::model_step(model, tr->x_ref[k], u, w);
    }
    double ex_gain = 0.0;
    if (model.E_x.size()) {
      Eigen::JacobiSVD<MatXd> svd(model.E_x);
      ex_gain = svd.singularValues().size() ? svd.singularValues()(0) : 0.0;
    }
    tr->sx = std::max(tr->sx, 2.0 * w_bar * ex_gain * win.M);
  } else {
    tr->n_vars = model.n_x + win.M * tr->n_free;
  }

  const double anchor_scale = std::max(win.anchor_e_bar, 1e-12);
  const double wsq_scale = std::max(w_bar * w_bar, 1e-12);

  NlpProblem p;
  p.n_vars = tr->n_vars;
  p.objective.value = [tr, x_hat_t, Vo = &Vo](const VecXd& z) {
    return -Vo->value(x_hat_t, tr->rollout(z).x.back());
  };
  p.objective.gradient = [tr, x_hat_t, Vo = &Vo](const VecXd& z) {
    const auto& r = tr->rollout(z);
    const VecXd d = r.x.back() - x_hat_t;
    return VecXd(-2.0 * r.x_sens.back().transpose() * (Vo->matrix() * d));
  };

  p.ineq_constraints.push_back(NlpFunction{
      [tr, anchor_scale, Vo = &Vo](const VecXd& z) {
        const auto& r = tr->rollout(z);
        return (Vo->value(r.x[0], tr->win->anchor_x_hat) - tr->win->anchor_e_bar) /
               anchor_scale;
      },
      [tr, anchor_scale, Vo = &Vo](const VecXd& z) {
        const auto& r = tr->rollout(z);
        const VecXd d = r.x[0] - tr->win->anchor_x_hat;
        return VecXd(2.0 * r.x_sens[0].transpose() * (Vo->matrix() * d) / anchor_scale);
      }});

  for (int k = 0; k < win.M; ++k) {
    p.ineq_constraints.push_back(NlpFunction{
        [tr, k, w_bar, wsq_scale](const VecXd& z) {
          const auto& r = tr->rollout(z);
          return (r.w[k].squaredNorm() - w_bar * w_bar) / wsq_scale;
        },
        [tr, k, wsq_scale](const VecXd& z) {
          const auto& r = tr->rollout(z);
          return VecXd(2.0 * r.w_sens[k].transpose() * r.w[k] / wsq_scale);
        }});
  }

  if (tr->mode == Mode::with_equalities) {
    for (int k = 0; k < win.M; ++k) {
      for (int i = 0; i < model.n_y; ++i) {
        p.eq_constraints.push_back(NlpFunction{
            [tr, k, i](const VecXd& z) {
              const auto& r = tr->rollout(z);
              const auto& rec = tr->win->records[k];
              const VecXd resid = rec.second -
                                  tr->model->output_nominal(r.x[k], rec.first) -
                                  tr->model->E_y * r.w[k];
              return resid[i];
            },
            [tr, k, i](const VecXd& z) {
              const auto& r = tr->rollout(z);
              const auto& rec = tr->win->records[k];
              const MatXd H = tr->output_jac(r.x[k], rec.first);
              const VecXd row = -(H * r.x_sens[k]).row(i).transpose() -
                                (tr->model->E_y * r.w_sens[k]).row(i).transpose();
              return row;
            }});
      }
    }
  }

  // Start list: replay/reference, steepest-radius direction through the
  // anchor block, anchor-axis extremes, random.
  std::vector<VecXd> starts;
  starts.push_back(VecXd::Zero(p.n_vars));
  if (tr->mode != Mode::full_elim && !win.replay_w.empty()) {
    VecXd z0 = VecXd::Zero(p.n_vars);
    for (int k = 0; k < win.M && k < static_cast<int>(win.replay_w.size()); ++k) {
      if (win.replay_w[k].size() != model.n_w) continue;
      if (tr->mode == Mode::meas_elim) {
        if (tr->n_free > 0)
          z0.segment(tr->noise_offset(k), tr->n_free) =
              tr->Ny.transpose() * win.replay_w[k] / tr->sw;
      } else {
        z0.segment(tr->noise_offset(k), tr->n_free) = win.replay_w[k] / tr->sw;
      }
    }
    starts.push_back(z0);
  }
  {
    const auto& r0 = tr->rollout(VecXd::Zero(p.n_vars));
    VecXd ascent =
        2.0 * r0.x_sens.back().transpose() * (Vo.matrix() * (r0.x.back() - x_hat_t));
    const double nrm = ascent.norm();
    if (nrm > 1e-12) {
      ascent /= nrm;
      for (const double scale : {0.9, -0.9, 0.45, -0.45})
        starts.push_back(VecXd(scale * ascent));
    }
  }
  const int axis_block = tr->mode == Mode::full_elim ? tr->state_offset(0) : 0;
  for (int i = 0; i < std::min(model.n_x, 3); ++i) {
    VecXd z = VecXd::Zero(p.n_vars);
    z[axis_block + i] = 0.9;
    starts.push_back(z);
    z[axis_block + i] = -0.9;
    starts.push_back(z);
  }
  core::Rng rng(opts.seed);
  for (int s = 0; s < opts.extra_starts; ++s) {
    VecXd z(p.n_vars);
    for (int i = 0; i < p.n_vars; ++i) z[i] = rng.uniform(-0.9, 0.9);
    starts.push_back(z);
  }

  // Proximal feasibility restoration (same constraints, stay near the start):
  // pulls each start into the non-falsified set without collapsing the start
  // diversity, which matters because the true noise sits exactly on the norm
  // boundary and the radius program has boundary-local maxima.
  auto restore_from = [&](const VecXd& z0) {
    NlpProblem restore = p;
    restore.objective.value = [z0](const VecXd& z) {
      return 5e-4 * (z - z0).squaredNorm();
    };
    restore.objective.gradient = [z0](const VecXd& z) {
      return VecXd(1e-3 * (z - z0));
    };
    nlp::SolveOptions ro = opts.nlp;
    ro.max_iters = 60;
    return nlp::solve(restore, z0, ro);
  };

  bool have_best = false;
  MembershipResult best;
  auto consider = [&](const nlp::NlpSolution& s) {
    if (!s.feasible(opts.nlp.feas_tol)) return;
    const double gamma = -s.objective_value;
    if (!have_best || gamma > best.gamma_hat) {
      const auto& r = tr->rollout(s.vars);
      best.gamma_hat = gamma;
      best.x_init = r.x[0];
      best.w_seq = r.w;
      best.status = s.status;
      have_best = true;
    }
  };
  VecXd best_vars;
  auto attempt = [&](const VecXd& z0) {
    nlp::NlpSolution s = nlp::solve(p, z0, opts.nlp);
    if (!s.feasible(opts.nlp.feas_tol)) {
      const nlp::NlpSolution rs = restore_from(z0);
      if (rs.feasible(opts.nlp.feas_tol)) s = nlp::solve(p, rs.vars, opts.nlp);
    }
    const double before = have_best ? best.gamma_hat : -1.0;
    consider(s);
    if (have_best && best.gamma_hat > before) best_vars = s.vars;
  };

  for (const auto& z0 : starts) attempt(z0);
  // Basin hopping around the incumbent: the maximizer usually sits on a
  // constraint corner, and neighbouring corners can carry a larger radius.
  for (int round = 0; round < opts.hop_rounds && have_best; ++round) {
    const VecXd center = best_vars;
    for (int j = 0; j < opts.hops_per_round; ++j) {
      const double scale = (j % 2 == 0) ? 0.5 : 0.15;
      attempt(center + rng.ball(p.n_vars, scale));
    }
  }
  if (!have_best)
    throw InfeasibleError("solve_membership: no feasible trajectory explains the data "
                          "(outlier noise?)");
  return best;
}

double membership_violation(const PlantModel& model, const MembershipWindow& win,
                            const QuadraticForm& Vo, const VecXd& x_init,
                            const std::vector<VecXd>& w_seq, double w_bar) {
  double worst = (Vo.value(x_init, win.anchor_x_hat) - win.anchor_e_bar) /
                 std::max(win.anchor_e_bar, 1e-12);
  VecXd x = x_init;
  for (int k = 0; k < win.M; ++k) {
    const auto& [u, y] = win.records[k];
    worst = std::max(worst, (w_seq[k].norm() - w_bar) / std::max(w_bar, 1e-12));
    const VecXd resid = y - model.output_nominal(x, u) - model.E_y * w_seq[k];
    worst = std::max(worst, resid.cwiseAbs().maxCoeff());
    x = core::model_step(model, x, u, w_seq[k]);
  }
  return worst;
}

}  // namespace rompc::setm
