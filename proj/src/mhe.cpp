#include "rompc/mhe/mhe.hpp"

#include "rompc/core/rng.hpp"

#include <memory>

namespace rompc::mhe {

namespace {

using nlp::NlpFunction;
using nlp::NlpProblem;

double smooth_norm(const VecXd& v, double eps) {
  return std::sqrt(v.squaredNorm() + eps * eps) - eps;
}
VecXd smooth_norm_grad(const VecXd& v, double eps) {
  return v / std::sqrt(v.squaredNorm() + eps * eps);
}

struct Rollout {
  std::vector<VecXd> x;       // x^_{-M..0}
  std::vector<VecXd> w;       // w^ per step
  std::vector<VecXd> y;       // explained outputs
  std::vector<MatXd> x_sens;  // d x_k / d z
  std::vector<MatXd> y_sens;  // d y_k / d z
};

struct Transcription {
  const PlantModel* model = nullptr;
  const EstimationWindow* win = nullptr;
  double sx = 1.0;
  double sw = 1.0;
  int n_vars = 0;

  mutable std::shared_ptr<std::pair<VecXd, Rollout>> memo =
      std::make_shared<std::pair<VecXd, Rollout>>();

  int noise_offset(int k) const { return model->n_x + k * model->n_w; }

  const Rollout& rollout(const VecXd& z) const {
    if (memo->first.size() == z.size() && memo->first == z) return memo->second;
    const int M = win->length();
    const int n_x = model->n_x;
    Rollout r;
    r.x.resize(M + 1);
    r.w.resize(M);
    r.y.resize(M);
    r.x_sens.resize(M + 1);
    r.y_sens.resize(M);

    r.x[0] = win->anchor_x_hat + sx * z.head(n_x);
    r.x_sens[0] = MatXd::Zero(n_x, n_vars);
    r.x_sens[0].leftCols(n_x) = sx * MatXd::Identity(n_x, n_x);

    for (int k = 0; k < M; ++k) {
      const VecXd& u = win->records[k].first;
      r.w[k] = sw * z.segment(noise_offset(k), model->n_w);
      MatXd dw = MatXd::Zero(model->n_w, n_vars);
      dw.middleCols(noise_offset(k), model->n_w) =
          sw * MatXd::Identity(model->n_w, model->n_w);

      r.y[k] = model->output_nominal(r.x[k], u) + model->E_y * r.w[k];
      MatXd H;
      if (model->output_jac_x) {
        H = model->output_jac_x(r.x[k], u);
      } else {
        H.resize(model->n_y, n_x);
        VecXd xp = r.x[k], xm = r.x[k];
        for (int j = 0; j < n_x; ++j) {
          const double h = 1e-6 * std::max(1.0, std::abs(r.x[k][j]));
          xp[j] += h;
          xm[j] -= h;
          H.col(j) = (model->output_nominal(xp, u) - model->output_nominal(xm, u)) / (2 * h);
          xp[j] = r.x[k][j];
          xm[j] = r.x[k][j];
        }
      }
      r.y_sens[k] = H * r.x_sens[k] + model->E_y * dw;

      r.x[k + 1] = model->step_nominal(r.x[k], u) + model->E_x * r.w[k];
      const MatXd A = core::step_jacobian_x(*model, r.x[k], u);
      r.x_sens[k + 1] = A * r.x_sens[k] + model->E_x * dw;
    }
    memo->first = z;
    memo->second = std::move(r);
    return memo->second;
  }
};

}  // namespace

MheSolution solve_mhe(const PlantModel& model, const MheConfig& cfg,
                      const EstimationWindow& window, double w_bar,
                      const nlp::SolveOptions& opts,
                      const std::vector<VecXd>* extra_inits) {
  model.check_dims();
  const int M = window.length();
  if (M < 1) throw std::invalid_argument("solve_mhe: empty window");
  if (M > cfg.M) throw std::invalid_argument("solve_mhe: window longer than horizon");

  auto tr = std::make_shared<Transcription>();
  tr->model = &model;
  tr->win = &window;
  tr->sx = 1.0;
  tr->sw = std::max(w_bar, 1e-9);
  tr->n_vars = model.n_x + M * model.n_w;

  const double eps = std::max(1e-9, 1e-3 * w_bar);
  const double etaM = std::pow(cfg.eta, M);

  NlpProblem p;
  p.n_vars = tr->n_vars;
  p.objective.value = [tr, &cfg, &window, w_bar, eps, M, etaM](const VecXd& z) {
    const auto& r = tr->rollout(z);
    double cost = 0.0;
    for (int k = 0; k < M; ++k) {
      const double disc = std::pow(cfg.eta, M - k - 1);
      cost += disc * cfg.sigma1.value(w_bar + smooth_norm(r.w[k], eps));
      cost += disc * cfg.sigma2.value(
                         smooth_norm(r.y[k] - window.records[k].second, eps));
    }
    cost += etaM * cfg.sigma_delta.value(
                       smooth_norm(r.x[0] - window.anchor_x_hat, eps));
    return cost;
  };
  p.objective.gradient = [tr, &cfg, &window, w_bar, eps, M, etaM](const VecXd& z) {
    const auto& r = tr->rollout(z);
    VecXd g = VecXd::Zero(z.size());
    for (int k = 0; k < M; ++k) {
      const double disc = std::pow(cfg.eta, M - k - 1);
      const double nw = smooth_norm(r.w[k], eps);
      const double d1 = cfg.sigma1.derivative(w_bar + nw);
      // d|w|/dz lives only in this step's noise block.
      const VecXd gw = smooth_norm_grad(r.w[k], eps);
      g.segment(tr->noise_offset(k), tr->model->n_w) += disc * d1 * tr->sw * gw;

      const VecXd resid = r.y[k] - window.records[k].second;
      const double ny = smooth_norm(resid, eps);
      const double d2 = cfg.sigma2.derivative(ny);
      g += disc * d2 * (r.y_sens[k].transpose() * smooth_norm_grad(resid, eps));
    }
    const VecXd da = r.x[0] - window.anchor_x_hat;
    const double dd = cfg.sigma_delta.derivative(smooth_norm(da, eps));
    g.head(tr->model->n_x) += etaM * dd * tr->sx * smooth_norm_grad(da, eps);
    return g;
  };

  std::vector<VecXd> inits;
  inits.push_back(VecXd::Zero(p.n_vars));  // anchor replay, zero noise
  if (extra_inits)
    for (const auto& z : *extra_inits)
      if (z.size() == p.n_vars) inits.push_back(z);

  nlp::NlpSolution s = nlp::solve_multistart(p, inits, opts);

  const auto& r = tr->rollout(s.vars);
  MheSolution out;
  out.x_hat_t = r.x.back();
  out.x_hat_anchor = r.x[0];
  out.w_seq = r.w;
  out.y_seq = r.y;
  out.status = s.status;
  // Exact (unsmoothed) cost and radius at the returned point; any feasible
  // point yields a sound radius, suboptimality only loosens it.
  double cost = 0.0;
  for (int k = 0; k < M; ++k) {
    const double disc = std::pow(cfg.eta, M - k - 1);
    cost += disc * cfg.sigma1.value(w_bar + r.w[k].norm());
    cost += disc * cfg.sigma2.value((r.y[k] - window.records[k].second).norm());
  }
  const double arrival = cfg.sigma_delta.value((r.x[0] - window.anchor_x_hat).norm());
  out.cost = cost + etaM * arrival;
  out.e_bar = cost + etaM * (window.anchor_e_bar + arrival);
  return out;
}

double mhe_apriori_bound(const MheConfig& cfg, int M_t, double e_bar_anchor,
                         double w_bar) {
  if (M_t < 0) throw std::invalid_argument("mhe_apriori_bound: M_t >= 0");
  const double etaM = std::pow(cfg.eta, M_t);
  const core::Gain a1_inv = cfg.alpha1.inverse();  // throws if not invertible
  return (1.0 - etaM) / (1.0 - cfg.eta) * cfg.sigma1.value(2.0 * w_bar) +
         etaM * (e_bar_anchor + cfg.sigma_delta.value(a1_inv.value(e_bar_anchor)));
}

Gain estimate_sigma_f(const PlantModel& model, const VecXd& x_center,
                      const VecXd& u_center, double radius, std::size_t samples,
                      std::uint64_t seed) {
  core::Rng rng(seed);
  double worst = 0.0;
  for (std::size_t i = 0; i < samples; ++i) {
    const VecXd x1 = x_center + rng.ball(model.n_x, radius);
    const VecXd x2 = x_center + rng.ball(model.n_x, radius);
    const VecXd u = u_center + rng.ball(model.n_u, radius);
    const double dx = (x1 - x2).norm();
    if (dx < 1e-12) continue;
    const double df = (model.step_nominal(x1, u) - model.step_nominal(x2, u)).norm();
    worst = std::max(worst, df / dx);
  }
  return Gain::linear(2.0 * worst);
}

CombinedUpdateResult combined_update(const PlantModel& model, const MheConfig& cfg,
                                     const obs::LuenbergerObserver& observer,
                                     const obs::EstimatorState& st,
                                     const EstimationWindow& window, const VecXd& u,
                                     const VecXd& y, double w_bar,
                                     const nlp::SolveOptions& opts) {
  const auto& ocert = observer.certificate();

  // Luenberger path: one observer step plus the identical-Lyapunov update.
  obs::EstimatorState luen = obs::observer_step(observer, st, u, y);
  const obs::HistoryRecord& rec = luen.newest();
  const double ioss_branch = cfg.eta * st.e_bar +
                             cfg.sigma1.value(w_bar + rec.w_hat.norm()) +
                             cfg.sigma2.value((rec.y_hat - rec.y).norm());
  const double obs_branch = ocert.eta_tilde * st.e_bar + ocert.sigma4.value(w_bar);
  const double luen_e_bar = std::min(obs_branch, ioss_branch);

  CombinedUpdateResult out;
  out.luenberger_e_bar = luen_e_bar;

  bool accept = false;
  MheSolution sol;
  if (window.length() >= 1) {
    sol = solve_mhe(model, cfg, window, w_bar, opts);
    // Keep the MHE estimate only if its radius also obeys the predictable
    // observer bounds the controller relies on.
    accept = sol.e_bar <= obs_branch + 1e-12 && sol.e_bar <= luen_e_bar + 1e-12;
  }

  if (accept) {
    out.state = luen;  // history/time bookkeeping from the observer step
    out.state.x_hat = sol.x_hat_t;
    out.state.e_bar = sol.e_bar;
    out.mhe_branch = true;
    out.mhe = std::move(sol);
  } else {
    out.state = luen;
    out.state.e_bar = luen_e_bar;
    out.mhe_branch = false;
    if (window.length() >= 1) out.mhe = std::move(sol);
  }
  return out;
}

}  // namespace rompc::mhe
