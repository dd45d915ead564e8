#include <doctest.h>

#include "rompc/mhe/mhe.hpp"
#include "rompc/sim/systems.hpp"
#include "test_systems.hpp"

using namespace rompc;
using cert::QuadraticForm;
using core::Gain;
using core::MatXd;
using core::VecXd;

namespace {

// Scalar x+ = x + w, y = x exactly.
core::PlantModel scalar_walk() {
  MatXd A(1, 1), B(1, 1), C(1, 1), E_x(1, 1), E_y(1, 1);
  A << 1.0;
  B << 0.0;
  C << 1.0;
  E_x << 1.0;
  E_y << 0.0;
  return testsys::make_linear_model(A, B, C, E_x, E_y, 0.0);
}

mhe::MheConfig handmade_config(int M, double eta, Gain s1, Gain s2, Gain sd) {
  mhe::MheConfig cfg;
  cfg.M = M;
  cfg.eta = eta;
  cfg.sigma1 = std::move(s1);
  cfg.sigma2 = std::move(s2);
  cfg.sigma_delta = std::move(sd);
  cfg.alpha1 = Gain::identity();
  return cfg;
}

}  // namespace

TEST_CASE("mhe: scalar quadratic closed form") {
  // min w^2 + 10 (x_{-1} - 1)^2 + 0.9 x_{-1}^2 with y_{t-1} = 1, anchor 0:
  // w* = 0, x*_{-1} = 10/10.9.
  auto m = scalar_walk();
  auto cfg = handmade_config(1, 0.9, Gain::quadratic(1.0), Gain::quadratic(10.0),
                             Gain::quadratic(1.0));
  mhe::EstimationWindow win;
  win.records.push_back({VecXd::Zero(1), VecXd::Constant(1, 1.0)});
  win.anchor_x_hat = VecXd::Zero(1);
  win.anchor_e_bar = 0.0;

  auto sol = mhe::solve_mhe(m, cfg, win, 0.0);
  const double xs = 10.0 / 10.9;
  CHECK(sol.x_hat_anchor[0] == doctest::Approx(xs).epsilon(1e-6));
  CHECK(sol.x_hat_t[0] == doctest::Approx(xs).epsilon(1e-6));
  CHECK(sol.w_seq[0].norm() <= 1e-6);
  CHECK(sol.cost == doctest::Approx(98.1 / 118.81).epsilon(1e-6));
  CHECK(sol.e_bar == doctest::Approx(sol.cost).epsilon(1e-9));  // zero anchor radius
}

TEST_CASE("mhe: perfectly explained noise-free data costs nothing") {
  auto sys = testsys::random_affine_system(13, /*w_bar=*/0.0);
  core::Rng rng(14);
  const int M = 4;
  VecXd x = rng.normal_vec(sys.model.n_x);
  mhe::EstimationWindow win;
  win.anchor_x_hat = x;
  win.anchor_e_bar = 0.37;
  for (int k = 0; k < M; ++k) {
    const VecXd u = rng.normal_vec(sys.model.n_u);
    win.records.push_back({u, core::model_output(sys.model, x, u, VecXd::Zero(sys.model.n_w))});
    x = sys.model.step_nominal(x, u);
  }
  auto cfg = sys.certs.ioss;
  mhe::MheConfig mc(M, cfg, Gain::quadratic(1.0));
  auto sol = mhe::solve_mhe(sys.model, mc, win, 0.0);
  CHECK(sol.cost <= 1e-10);
  CHECK(sol.e_bar == doctest::Approx(std::pow(mc.eta, M) * 0.37).epsilon(1e-6));
  CHECK((sol.x_hat_t - x).norm() <= 1e-5);
}

TEST_CASE("mhe a-priori bound: hand evaluation and invertibility guard") {
  auto cfg = handmade_config(2, 0.5, Gain::linear(0.4), Gain::zero(), Gain::linear(0.2));
  // sigma1(2 w_bar) = 0.4 at w_bar = 0.5; e_anchor = 1; sigma_d(a1^{-1}(1)) = 0.2.
  CHECK(mhe::mhe_apriori_bound(cfg, 2, 1.0, 0.5) == doctest::Approx(0.9));
  CHECK(mhe::mhe_apriori_bound(cfg, 0, 1.0, 0.5) == doctest::Approx(1.2));

  cfg.alpha1 = Gain(std::vector<Gain::Term>{{1.0, 1.0}, {1.0, 2.0}});
  CHECK_THROWS_AS(mhe::mhe_apriori_bound(cfg, 2, 1.0, 0.5),
                  UnsupportedCertificateError);
}

TEST_CASE("mhe e_bar never exceeds the a-priori bound along runs") {
  auto sys = testsys::random_affine_system(23);
  const auto& oc = sys.certs.observer;
  obs::LuenbergerObserver observer(sys.model, sys.certs.L, oc);
  mhe::MheConfig cfg(5, sys.certs.ioss, Gain::quadratic(1.0));
  const double w_bar = sys.model.w_bound;
  core::Rng rng(24);

  VecXd x = rng.normal_vec(sys.model.n_x);
  obs::EstimatorState st;
  st.x_hat = x;
  st.e_bar = 0.0;
  std::vector<std::pair<VecXd, VecXd>> data;
  std::vector<std::pair<VecXd, double>> lag{{st.x_hat, st.e_bar}};

  for (int t = 0; t < 50; ++t) {
    const VecXd u = sys.certs.clf.kappa(st.x_hat, VecXd::Zero(sys.model.n_x),
                                        VecXd::Zero(sys.model.n_u));
    const VecXd w = rng.sphere(sys.model.n_w, w_bar);
    const VecXd y = core::model_output(sys.model, x, u, w);
    data.push_back({u, y});

    const int Mt = std::min<int>(cfg.M, static_cast<int>(data.size()));
    mhe::EstimationWindow win;
    for (std::size_t k = data.size() - Mt; k < data.size(); ++k)
      win.records.push_back(data[k]);
    win.anchor_x_hat = lag[data.size() - Mt].first;
    win.anchor_e_bar = lag[data.size() - Mt].second;

    auto sol = mhe::solve_mhe(sys.model, cfg, win, w_bar);
    // Candidate-solution inequality (exact up to solver feasibility noise).
    CHECK(sol.e_bar <=
          mhe::mhe_apriori_bound(cfg, Mt, win.anchor_e_bar, w_bar) + 1e-6);
    // Soundness of the certified radius for the MHE estimate.
    x = core::model_step(sys.model, x, u, w);
    CHECK(sys.certs.ioss.W.value(sol.x_hat_t, x) <= sol.e_bar + 1e-9);

    st.x_hat = sol.x_hat_t;
    st.e_bar = sol.e_bar;
    lag.push_back({st.x_hat, st.e_bar});
  }
}

TEST_CASE("feasible-point soundness: any rollout yields a valid radius") {
  // Evaluate the radius formula at random (not optimized) trajectories; the
  // bound must still dominate the certificate distance to the truth.
  auto sys = testsys::random_affine_system(29);
  core::Rng rng(30);
  const double w_bar = sys.model.w_bound;
  const int M = 3;

  VecXd x0 = rng.normal_vec(sys.model.n_x);
  VecXd x_hat0 = x0 + 0.1 * rng.normal_vec(sys.model.n_x);
  const double e0 = sys.certs.ioss.W.value(x_hat0, x0) + 1e-9;
  mhe::EstimationWindow win;
  win.anchor_x_hat = x_hat0;
  win.anchor_e_bar = e0;
  VecXd x = x0;
  for (int k = 0; k < M; ++k) {
    const VecXd u = rng.normal_vec(sys.model.n_u);
    const VecXd w = rng.sphere(sys.model.n_w, w_bar);
    win.records.push_back({u, core::model_output(sys.model, x, u, w)});
    x = core::model_step(sys.model, x, u, w);
  }
  mhe::MheConfig cfg(M, sys.certs.ioss, Gain::quadratic(1.0));

  for (int trial = 0; trial < 30; ++trial) {
    // Random feasible point: any (anchor guess, noise sequence) rolls out to a
    // trajectory; the discounted-residual radius must cover the truth.
    VecXd xa = x_hat0 + 0.2 * rng.normal_vec(sys.model.n_x);
    double cost = 0.0;
    VecXd xs = xa;
    for (int k = 0; k < M; ++k) {
      const VecXd wk = rng.ball(sys.model.n_w, 2.0 * w_bar);
      const double disc = std::pow(cfg.eta, M - k - 1);
      const VecXd yk = core::model_output(sys.model, xs, win.records[k].first, wk);
      cost += disc * cfg.sigma1.value(w_bar + wk.norm());
      cost += disc * cfg.sigma2.value((yk - win.records[k].second).norm());
      xs = core::model_step(sys.model, xs, win.records[k].first, wk);
    }
    const double e_bar =
        cost + std::pow(cfg.eta, M) *
                   (e0 + cfg.sigma_delta.value((xa - x_hat0).norm()));
    CHECK(sys.certs.ioss.W.value(xs, x) <= e_bar + 1e-9);
  }
}

TEST_CASE("candidate domination: inits never worsen the returned cost") {
  auto sys = testsys::random_affine_system(37);
  core::Rng rng(38);
  const double w_bar = sys.model.w_bound;
  const int M = 4;
  VecXd x = rng.normal_vec(sys.model.n_x);
  const VecXd x0 = x;
  mhe::EstimationWindow win;
  win.anchor_x_hat = x;
  win.anchor_e_bar = 0.0;
  std::vector<VecXd> w_true;
  for (int k = 0; k < M; ++k) {
    const VecXd u = rng.normal_vec(sys.model.n_u);
    const VecXd w = rng.sphere(sys.model.n_w, w_bar);
    w_true.push_back(w);
    win.records.push_back({u, core::model_output(sys.model, x, u, w)});
    x = core::model_step(sys.model, x, u, w);
  }
  mhe::MheConfig cfg(M, sys.certs.ioss, Gain::quadratic(1.0));

  // Pack the true trajectory as an init (chi = 0 at the anchor, omega = w/sw).
  VecXd truth_init = VecXd::Zero(sys.model.n_x + M * sys.model.n_w);
  for (int k = 0; k < M; ++k)
    truth_init.segment(sys.model.n_x + k * sys.model.n_w, sys.model.n_w) =
        w_true[k] / std::max(w_bar, 1e-9);
  std::vector<VecXd> extra{truth_init};
  auto sol = mhe::solve_mhe(sys.model, cfg, win, w_bar, {}, &extra);

  // Cost of the truth candidate, exact formula.
  double cand = 0.0;
  VecXd xs = x0;
  for (int k = 0; k < M; ++k) {
    const double disc = std::pow(cfg.eta, M - k - 1);
    cand += disc * cfg.sigma1.value(w_bar + w_true[k].norm());
    xs = core::model_step(sys.model, xs, win.records[k].first, w_true[k]);
  }
  CHECK(sol.cost <= cand + 1e-6);
}

TEST_CASE("combined update: branch selection") {
  auto sys = testsys::random_affine_system(43, /*w_bar=*/0.0);
  const auto& oc = sys.certs.observer;
  obs::LuenbergerObserver observer(sys.model, sys.certs.L, oc);
  mhe::MheConfig cfg(3, sys.certs.ioss, Gain::quadratic(1.0));
  core::Rng rng(44);

  // Clean data with a zero-radius anchor: the MHE radius contracts to
  // eta^M * 0 = 0 and wins.
  VecXd x = rng.normal_vec(sys.model.n_x);
  obs::EstimatorState st;
  st.x_hat = x;
  st.e_bar = 0.0;
  mhe::EstimationWindow win;
  win.anchor_x_hat = x;
  win.anchor_e_bar = 0.0;
  VecXd xs = x;
  VecXd u_last, y_last;
  for (int k = 0; k < 3; ++k) {
    const VecXd u = rng.normal_vec(sys.model.n_u);
    const VecXd y = core::model_output(sys.model, xs, u, VecXd::Zero(sys.model.n_w));
    win.records.push_back({u, y});
    if (k < 2) {
      st = obs::observer_step(observer, st, u, y);
      st.e_bar = 0.0;
    }
    u_last = u;
    y_last = y;
    xs = sys.model.step_nominal(xs, u);
  }
  auto r = mhe::combined_update(sys.model, cfg, observer, st, win, u_last, y_last, 0.0);
  CHECK(r.mhe_branch);
  CHECK(r.state.e_bar <= 1e-9);

  // A distant, wide anchor inflates the MHE radius past the observer branch.
  mhe::EstimationWindow bad = win;
  bad.anchor_x_hat = win.anchor_x_hat + VecXd::Constant(sys.model.n_x, 5.0);
  bad.anchor_e_bar = 50.0;
  auto r2 = mhe::combined_update(sys.model, cfg, observer, st, bad, u_last, y_last, 0.0);
  CHECK_FALSE(r2.mhe_branch);
  CHECK(r2.state.e_bar == doctest::Approx(r2.luenberger_e_bar));
}

TEST_CASE("sigma_f estimate majorizes sampled step differences") {
  auto [m, cs] = sim::build_quadrotor();
  VecXd x_c = VecXd::Zero(10);
  x_c[0] = 3.7;
  x_c[1] = 3.0;
  x_c[2] = 10.0;
  VecXd u_c = VecXd::Zero(3);
  u_c[2] = 9.8 / 0.91;
  auto sf = mhe::estimate_sigma_f(m, x_c, u_c, 0.5, 2000, 7);
  core::Rng rng(8);
  for (int i = 0; i < 200; ++i) {
    const VecXd x1 = x_c + rng.ball(10, 0.5);
    const VecXd x2 = x_c + rng.ball(10, 0.5);
    const VecXd u = u_c + rng.ball(3, 0.5);
    const double df = (m.step_nominal(x1, u) - m.step_nominal(x2, u)).norm();
    CHECK(df <= sf.value((x1 - x2).norm()) + 1e-12);
  }
}
