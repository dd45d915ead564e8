#include <doctest.h>

#include "rompc/obs/error_bounds.hpp"
#include "test_systems.hpp"

using namespace rompc;
using cert::QuadraticForm;
using core::Gain;
using core::MatXd;
using core::VecXd;

namespace {

// Scalar x+ = 0.9 x, y = x, L = -0.5 fixture.
struct ScalarFixture {
  core::PlantModel model = testsys::make_linear_model(
      (MatXd(1, 1) << 0.9).finished(), (MatXd(1, 1) << 1.0).finished(),
      (MatXd(1, 1) << 1.0).finished(), (MatXd(1, 1) << 1.0).finished(),
      (MatXd(1, 1) << 0.0).finished(), 0.1);
  cert::ObserverCertificate cert{QuadraticForm::identity(1), 0.16, Gain::zero(),
                                 Gain(0.5, 0.5), Gain::zero()};
  obs::LuenbergerObserver observer{model, (MatXd(1, 1) << -0.5).finished(), cert};
};

obs::EstimatorState state_with_residuals(double e_bar, double w_hat_norm,
                                         double y_resid) {
  obs::EstimatorState st;
  st.x_hat = VecXd::Zero(1);
  st.e_bar = e_bar;
  st.capacity = 8;
  obs::HistoryRecord rec;
  rec.u = VecXd::Zero(1);
  rec.y = VecXd::Zero(1);
  rec.w_hat = VecXd::Constant(1, w_hat_norm);
  rec.y_hat = VecXd::Constant(1, y_resid);
  st.history.push_back(rec);
  st.t = 1;
  return st;
}

}  // namespace

TEST_CASE("observer step: zero innovation and the hand-worked scalar case") {
  ScalarFixture f;
  obs::EstimatorState st;
  st.x_hat = VecXd::Constant(1, 2.0);
  st.e_bar = 1.0;

  // Consistent output: innovation vanishes, estimate follows the nominal map.
  const VecXd y_consistent = f.model.output_nominal(st.x_hat, VecXd::Zero(1));
  auto st1 = obs::observer_step(f.observer, st, VecXd::Zero(1), y_consistent);
  CHECK(st1.x_hat[0] == doctest::Approx(1.8).epsilon(1e-14));
  CHECK(st1.e_bar == 1.0);  // radius untouched by the step
  CHECK(st1.t == 1);
  CHECK(st1.history.size() == 1);

  // True state 1: innovation -0.5 (2 - 1) shrinks the error 1 -> 0.4.
  const VecXd y_true = VecXd::Constant(1, 1.0);
  auto st2 = obs::observer_step(f.observer, st, VecXd::Zero(1), y_true);
  CHECK(st2.x_hat[0] == doctest::Approx(1.3).epsilon(1e-14));
  CHECK(std::abs(st2.x_hat[0] - 0.9) == doctest::Approx(0.4).epsilon(1e-12));

  // History rings at the configured capacity.
  st.capacity = 2;
  auto s = st;
  for (int k = 0; k < 5; ++k) s = obs::observer_step(f.observer, s, VecXd::Zero(1), y_true);
  CHECK(s.history.size() == 2);
  CHECK(s.t == 5);
}

TEST_CASE("identical update takes the min of the two branches") {
  cert::IossCertificate ci(QuadraticForm::identity(1), 0.96, Gain::zero(), Gain::zero());
  cert::ObserverCertificate co(QuadraticForm::identity(1), 0.957, Gain::zero(),
                               Gain::zero(), Gain::zero());

  // Zero residuals, w_bar = 0: min(0.957, 0.96) -> the observer branch wins.
  auto st = state_with_residuals(1.0, 0.0, 0.0);
  CHECK(obs::error_update_identical(st, ci, co, 0.0) == doctest::Approx(0.957));

  // Exact-estimate fixed point.
  auto st0 = state_with_residuals(0.0, 0.0, 0.0);
  CHECK(obs::error_update_identical(st0, ci, co, 0.0) == 0.0);

  // A-priori fixed point is preserved under large residuals (the residual
  // branch carries sigma1 here so big residuals push it out of the min).
  cert::IossCertificate ci2(QuadraticForm::identity(1), 0.96, Gain::identity(),
                            Gain::zero());
  cert::ObserverCertificate co2(QuadraticForm::identity(1), 0.5, Gain::quadratic(1.0),
                                Gain::zero(), Gain::zero());
  const double w_bar = 0.3;
  const double e_fix = co2.sigma4.value(w_bar) / (1.0 - co2.eta_tilde);
  auto st_fix = state_with_residuals(e_fix, 10.0, 10.0);
  CHECK(obs::error_update_identical(st_fix, ci2, co2, w_bar) ==
        doctest::Approx(e_fix).epsilon(1e-12));

  obs::EstimatorState empty;
  empty.x_hat = VecXd::Zero(1);
  CHECK_THROWS_AS(obs::error_update_identical(empty, ci, co, 0.0),
                  std::invalid_argument);
}

TEST_CASE("general update: hand-worked window sum and the identical reduction") {
  // sigma1 = identity on (w_bar + |w^|) with w_bar = 0, sigma2 = 0; residuals
  // {0.1 newest, 0.2 older}; eta = 0.5; anchor radii e_{t-1} = 0.7, e_{t-2} = 1.
  cert::IossCertificate ci(QuadraticForm::identity(1), 0.5, Gain::identity(),
                           Gain::zero());
  ci.alpha1 = Gain::identity();
  ci.alpha2 = Gain::identity();
  cert::ObserverCertificate co(QuadraticForm::identity(1), 0.9, Gain::zero(),
                               Gain::zero(), Gain::zero());
  co.alpha5 = Gain::identity();
  co.alpha6 = Gain::identity();

  obs::EstimatorState st;
  st.x_hat = VecXd::Zero(1);
  st.capacity = 4;
  st.t = 2;
  obs::HistoryRecord older, newer;
  older.u = newer.u = VecXd::Zero(1);
  older.y = newer.y = VecXd::Zero(1);
  older.y_hat = newer.y_hat = VecXd::Zero(1);
  older.w_hat = VecXd::Constant(1, 0.2);
  newer.w_hat = VecXd::Constant(1, 0.1);
  st.history.push_back(older);
  st.history.push_back(newer);

  const std::vector<double> past = {0.7, 1.0};  // e_{t-1}, e_{t-2}
  // M = 2 branch: 0.1 + 0.5 * 0.2 + 0.25 * 1 = 0.45; M = 1: 0.1 + 0.5 * 0.7 = 0.45.
  const double got = obs::error_update_general(st, ci, co, 0.0, 2, past);
  CHECK(got == doctest::Approx(std::min(0.45, 0.9 * 0.7)).epsilon(1e-12));

  // With M_bar = 1 the general update equals the identical update exactly.
  obs::EstimatorState st1 = st;
  st1.e_bar = past[0];
  const double ident = obs::error_update_identical(st1, ci, co, 0.0);
  const double gen1 = obs::error_update_general(st, ci, co, 0.0, 1, past);
  CHECK(gen1 == ident);

  // Non-invertible envelope rejects the certificate.
  cert::IossCertificate bad = ci;
  bad.alpha1 = Gain(std::vector<Gain::Term>{{1.0, 1.0}, {1.0, 2.0}});
  CHECK_THROWS_AS(obs::error_update_general(st, bad, co, 0.0, 2, past),
                  UnsupportedCertificateError);
}

TEST_CASE("predict_error closed form") {
  cert::ObserverCertificate co(QuadraticForm::identity(1), 0.5, Gain::identity(),
                               Gain::zero(), Gain::zero());
  CHECK(obs::predict_error(1.0, 0, co, 0.25) == doctest::Approx(1.0));
  CHECK(obs::predict_error(1.0, 1, co, 0.25) == doctest::Approx(0.75));
  // Fixed point is invariant for every horizon.
  const double e_fix = co.sigma4.value(0.25) / (1.0 - co.eta_tilde);
  for (int k : {1, 3, 10})
    CHECK(obs::predict_error(e_fix, k, co, 0.25) == doctest::Approx(e_fix));
}

TEST_CASE("prediction mismatch bound") {
  cert::ObserverCertificate co(QuadraticForm::identity(1), 0.5, Gain::zero(),
                               Gain::linear(2.0), Gain::linear(3.0));
  CHECK(obs::prediction_mismatch_bound(0.0, co, 0.0) == 0.0);
  CHECK(obs::prediction_mismatch_bound(0.5, co, 0.1) == doctest::Approx(1.3));
}

TEST_CASE("observability update: hand-worked window") {
  obs::ObservabilityCertificate oc(2, Gain::identity(), Gain::identity());
  cert::ObserverCertificate co(QuadraticForm::identity(1), 0.9, Gain::zero(),
                               Gain::zero(), Gain::zero());
  co.alpha6 = Gain::identity();

  obs::EstimatorState st;
  st.x_hat = VecXd::Zero(1);
  st.capacity = 4;
  st.t = 3;
  for (double resid : {0.2, 0.1}) {
    obs::HistoryRecord rec;
    rec.u = VecXd::Zero(1);
    rec.y = VecXd::Constant(1, resid);
    rec.y_hat = VecXd::Zero(1);
    rec.w_hat = VecXd::Zero(1);
    st.history.push_back(rec);
  }
  // e_obs = (0 + 0.1) + (0 + 0.2) = 0.3; observer branch 0.9 * 10 = 9.
  CHECK(obs::observability_update(st, oc, co, 0.0, 10.0) == doctest::Approx(0.3));

  // Zero residuals pin the bound at zero.
  for (auto& rec : st.history) rec.y = VecXd::Zero(1);
  CHECK(obs::observability_update(st, oc, co, 0.0, 10.0) == 0.0);

  st.history.pop_back();
  CHECK_THROWS_AS(obs::observability_update(st, oc, co, 0.0, 1.0),
                  std::invalid_argument);
}

TEST_CASE("outlier inflation: geometric accumulation of the excess") {
  cert::IossCertificate ci(QuadraticForm::identity(1), 0.5, Gain::linear(0.2),
                           Gain::zero());
  cert::ObserverCertificate co(QuadraticForm::identity(1), 0.3, Gain::linear(0.2),
                               Gain::zero(), Gain::zero());
  // eta_eps = max(0.3, 0.5) = 0.5; sigma_eps(r) = 0.4 r (linear terms shift
  // exactly); single outlier of excess 0.1 at k = 0.
  const std::vector<double> e_bar = {1.0, 1.0, 1.0};
  const std::vector<double> w_norms = {0.6, 0.5, 0.5};  // w_bar = 0.5
  auto inflated = obs::outlier_inflation(e_bar, w_norms, 0.5, ci, co, 2.0);
  CHECK(inflated[0] == doctest::Approx(1.0));
  CHECK(inflated[1] == doctest::Approx(1.0 + 0.4 * 0.1));
  CHECK(inflated[2] == doctest::Approx(1.0 + 0.5 * 0.4 * 0.1));

  // No outliers and a valid initial radius: no inflation at all.
  const std::vector<double> clean = {0.5, 0.5, 0.5};
  auto same = obs::outlier_inflation(e_bar, clean, 0.5, ci, co, 2.0);
  for (std::size_t i = 0; i < e_bar.size(); ++i) CHECK(same[i] == e_bar[i]);
}

TEST_CASE("bound validity on simulated runs (identical + general updates)") {
  // Random linear systems, noisy closed loop under the tracking feedback;
  // Vo(x^, x) <= e_bar must hold at every step.
  for (std::uint64_t seed : {3u, 7u, 19u}) {
    auto sys = testsys::random_affine_system(seed);
    const auto& oc = sys.certs.observer;
    cert::IossCertificate ci = cert::make_identical_ioss_certificate(
        oc.Vo, sys.certs.L, sys.model.E_x, sys.model.E_y, oc.eta_tilde,
        0.96 / oc.eta_tilde - 1.0);
    obs::LuenbergerObserver observer(sys.model, sys.certs.L, oc);

    core::Rng rng(seed + 1);
    VecXd x = rng.normal_vec(sys.model.n_x);
    obs::EstimatorState st;
    st.x_hat = x + 0.1 * rng.normal_vec(sys.model.n_x);
    st.e_bar = oc.Vo.value(st.x_hat, x) + 1e-12;
    st.capacity = 6;
    const double w_bar = sys.model.w_bound;

    std::vector<double> past_radii{st.e_bar};
    double worst_gap = -1e100;
    for (int t = 0; t < 120; ++t) {
      const VecXd u = sys.certs.clf.kappa(st.x_hat, VecXd::Zero(sys.model.n_x),
                                          VecXd::Zero(sys.model.n_u));
      const VecXd w = rng.sphere(sys.model.n_w, w_bar);
      const VecXd y = core::model_output(sys.model, x, u, w);

      auto next = obs::observer_step(observer, st, u, y);
      // Identical-mode radius.
      next.e_bar = obs::error_update_identical(next, ci, oc, w_bar);
      // The general update with eigen envelopes must also stay valid.
      std::vector<double> recent(past_radii.rbegin(),
                                 past_radii.rbegin() +
                                     std::min<std::size_t>(4, past_radii.size()));
      const double e_gen = obs::error_update_general(next, ci, oc, w_bar, 4, recent);

      x = core::model_step(sys.model, x, u, w);
      st = std::move(next);
      past_radii.push_back(st.e_bar);

      const double vo = oc.Vo.value(st.x_hat, x);
      CHECK(vo <= st.e_bar + 1e-9);
      CHECK(vo <= e_gen + 1e-9);
      worst_gap = std::max(worst_gap, vo - st.e_bar);

      // Update monotonicity in the radius argument.
      obs::EstimatorState bigger = st;
      bigger.e_bar = st.e_bar * 2.0 + 0.1;
      CHECK(obs::error_update_identical(bigger, ci, oc, w_bar) >=
            obs::error_update_identical(st, ci, oc, w_bar) - 1e-12);
    }
    CHECK(worst_gap <= 1e-9);
  }
}

TEST_CASE("k-step prediction dominates the realized updates") {
  auto sys = testsys::random_affine_system(5);
  const auto& oc = sys.certs.observer;
  const double w_bar = sys.model.w_bound;
  double e = 0.3;
  for (int k = 0; k <= 8; ++k) {
    CHECK(e <= obs::predict_error(0.3, k, oc, w_bar) + 1e-12);
    e = oc.eta_tilde * e + oc.sigma4.value(w_bar);  // worst-case realized update
  }
}

TEST_CASE("prediction mismatch bound holds along simulated runs") {
  auto sys = testsys::random_affine_system(9);
  const auto& oc = sys.certs.observer;
  obs::LuenbergerObserver observer(sys.model, sys.certs.L, oc);
  core::Rng rng(10);
  VecXd x = rng.normal_vec(sys.model.n_x);
  obs::EstimatorState st;
  st.x_hat = x + 0.05 * rng.normal_vec(sys.model.n_x);
  st.e_bar = oc.Vo.value(st.x_hat, x) + 1e-12;
  const double w_bar = sys.model.w_bound;
  cert::IossCertificate ci = cert::make_identical_ioss_certificate(
      oc.Vo, sys.certs.L, sys.model.E_x, sys.model.E_y, oc.eta_tilde,
      0.96 / oc.eta_tilde - 1.0);

  for (int t = 0; t < 80; ++t) {
    const VecXd u = sys.certs.clf.kappa(st.x_hat, VecXd::Zero(sys.model.n_x),
                                        VecXd::Zero(sys.model.n_u));
    const VecXd w = rng.sphere(sys.model.n_w, w_bar);
    const VecXd y = core::model_output(sys.model, x, u, w);
    const VecXd predicted = sys.model.step_nominal(st.x_hat, u);
    const double bound = obs::prediction_mismatch_bound(st.e_bar, oc, w_bar);

    auto next = obs::observer_step(observer, st, u, y);
    next.e_bar = obs::error_update_identical(next, ci, oc, w_bar);
    CHECK((next.x_hat - predicted).norm() <= bound + 1e-9);
    x = core::model_step(sys.model, x, u, w);
    st = std::move(next);
  }
}

TEST_CASE("rank-deficient E_x disables the detectability updates") {
  MatXd A = 0.5 * MatXd::Identity(2, 2);
  MatXd B = MatXd::Identity(2, 1);
  MatXd C = MatXd::Identity(1, 2);
  MatXd E_x = MatXd::Zero(2, 2);
  E_x(0, 0) = 1.0;  // rank 1
  auto m = testsys::make_linear_model(A, B, C, E_x, MatXd::Zero(1, 2), 0.1);
  cert::ObserverCertificate co(QuadraticForm::identity(2), 0.5, Gain::zero(),
                               Gain::zero(), Gain::zero());
  obs::LuenbergerObserver ob(m, MatXd::Zero(2, 1), co);
  CHECK_FALSE(ob.supports_ioss_updates());
  CHECK_THROWS_AS(ob.Ex_pinv(), ModelRejectedError);

  // The observer itself still runs; the detectability update is what rejects.
  obs::EstimatorState st;
  st.x_hat = VecXd::Zero(2);
  auto st1 = obs::observer_step(ob, st, VecXd::Zero(1), VecXd::Zero(1));
  cert::IossCertificate ci(QuadraticForm::identity(2), 0.5, Gain::zero(), Gain::zero());
  CHECK_THROWS_AS(obs::error_update_identical(st1, ci, co, 0.1), ModelRejectedError);
}
