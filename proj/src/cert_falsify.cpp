#include "rompc/cert/falsify.hpp"

#include "rompc/core/rng.hpp"

namespace rompc::cert {

namespace {

using core::Rng;

struct Tuple {
  VecXd x, x_tilde, u, w, w_tilde;
};

class TupleSampler {
 public:
  TupleSampler(const PlantModel& model, const SampleOpts& opts)
      : model_(model), opts_(opts), rng_(opts.seed) {
    x_center_ = opts.x_center.size() ? opts.x_center : VecXd::Zero(model.n_x);
    u_center_ = opts.u_center.size() ? opts.u_center : VecXd::Zero(model.n_u);
    u_radius_ = opts.input_radius >= 0.0 ? opts.input_radius : opts.radius;
    w_radius_ = opts.disturbance_radius >= 0.0 ? opts.disturbance_radius : model.w_bound;
  }

  Tuple draw() {
    Tuple t;
    t.x = clamp(x_center_ + rng_.ball(model_.n_x, opts_.radius), opts_.x_lower,
                opts_.x_upper);
    t.x_tilde = clamp(x_center_ + rng_.ball(model_.n_x, opts_.radius), opts_.x_lower,
                      opts_.x_upper);
    t.u = clamp(u_center_ + rng_.ball(model_.n_u, u_radius_), opts_.u_lower,
                opts_.u_upper);
    t.w = rng_.ball(model_.n_w, w_radius_);
    t.w_tilde = rng_.ball(model_.n_w, w_radius_);
    return t;
  }

 private:
  static VecXd clamp(VecXd v, const VecXd& lo, const VecXd& hi) {
    if (lo.size() == v.size()) v = v.cwiseMax(lo);
    if (hi.size() == v.size()) v = v.cwiseMin(hi);
    return v;
  }

  const PlantModel& model_;
  const SampleOpts& opts_;
  Rng rng_;
  VecXd x_center_, u_center_;
  double u_radius_ = 0.0, w_radius_ = 0.0;
};

void record(FalsificationReport& rep, const Tuple& t, double lhs, double rhs,
            double tol) {
  const double residual = lhs - rhs;
  if (residual > rep.worst_residual) {
    rep.worst_residual = residual;
    if (residual > tol)
      rep.witness = Witness{t.x, t.x_tilde, t.u, t.w, t.w_tilde, lhs, rhs};
  }
  if (residual > tol) ++rep.n_violations;
}

}  // namespace

FalsificationReport verify_ioss_decrease(const PlantModel& model,
                                         const IossCertificate& cert,
                                         const SampleOpts& opts) {
  model.check_dims();
  TupleSampler sampler(model, opts);
  FalsificationReport rep;
  rep.n_samples = opts.count;
  for (std::size_t i = 0; i < opts.count; ++i) {
    const Tuple t = sampler.draw();
    const VecXd xp = core::model_step(model, t.x, t.u, t.w);
    const VecXd xtp = core::model_step(model, t.x_tilde, t.u, t.w_tilde);
    const VecXd y = core::model_output(model, t.x, t.u, t.w);
    const VecXd yt = core::model_output(model, t.x_tilde, t.u, t.w_tilde);
    const double lhs = cert.W.value(xp, xtp);
    const double rhs = cert.eta * cert.W.value(t.x, t.x_tilde) +
                       cert.sigma1.value((t.w - t.w_tilde).norm()) +
                       cert.sigma2.value((y - yt).norm());
    record(rep, t, lhs, rhs, opts.tolerance);
  }
  return rep;
}

FalsificationReport verify_iss_clf(const PlantModel& model, const IssClfCertificate& cert,
                                   const SampleOpts& opts) {
  model.check_dims();
  TupleSampler sampler(model, opts);
  FalsificationReport rep;
  rep.n_samples = opts.count;
  for (std::size_t i = 0; i < opts.count; ++i) {
    const Tuple t = sampler.draw();
    const VecXd u_track = cert.kappa(t.x_tilde, t.x, t.u);
    const VecXd xp = core::model_step(model, t.x, t.u, t.w);
    const VecXd xtp = core::model_step(model, t.x_tilde, u_track, t.w_tilde);
    const double lhs = cert.V.value(xp, xtp);
    const double rhs = cert.rho * cert.V.value(t.x, t.x_tilde) +
                       cert.sigma3.value((t.w - t.w_tilde).norm());
    record(rep, t, lhs, rhs, opts.tolerance);
  }
  return rep;
}

FalsificationReport verify_observer(const PlantModel& model,
                                    const obs::LuenbergerObserver& observer,
                                    const ObserverCertificate& cert,
                                    const SampleOpts& opts) {
  model.check_dims();
  TupleSampler sampler(model, opts);
  FalsificationReport rep;
  rep.n_samples = opts.count;
  for (std::size_t i = 0; i < opts.count; ++i) {
    const Tuple t = sampler.draw();  // x_tilde plays the estimate role
    const VecXd& x_hat = t.x_tilde;
    const VecXd y = core::model_output(model, t.x, t.u, t.w);
    const VecXd x_hat_next = observer.predict(x_hat, t.u, y);
    const VecXd x_next = core::model_step(model, t.x, t.u, t.w);

    const double vo = cert.Vo.value(x_hat, t.x);
    const double wn = t.w.norm();

    // Decrease inequality.
    const double lhs1 = cert.Vo.value(x_hat_next, x_next);
    const double rhs1 = cert.eta_tilde * vo + cert.sigma4.value(wn);
    record(rep, t, lhs1, rhs1, opts.tolerance);

    // Injection bound.
    const double lhs2 = observer.injection(x_hat, t.u, y).norm();
    const double rhs2 = cert.gamma_L1.value(vo) + cert.gamma_L2.value(wn);
    record(rep, t, lhs2, rhs2, opts.tolerance);
  }
  return rep;
}

FalsificationReport verify_tube_cross(const PlantModel& model,
                                      const obs::LuenbergerObserver& observer,
                                      const IssClfCertificate& clf,
                                      const ObserverCertificate& ocert,
                                      const core::Gain& gamma_so,
                                      const core::Gain& gamma_sw,
                                      const SampleOpts& opts) {
  model.check_dims();
  TupleSampler sampler(model, opts);
  FalsificationReport rep;
  rep.n_samples = opts.count;
  for (std::size_t i = 0; i < opts.count; ++i) {
    Tuple t = sampler.draw();
    // Roles: x = true state, x_tilde = estimate, second draw supplies the
    // nominal state.
    Tuple t2 = sampler.draw();
    const VecXd& x_nom = t2.x;
    const VecXd& u_bar = t.u;
    const VecXd u_apply = clf.kappa(t.x_tilde, x_nom, u_bar);
    const VecXd y = core::model_output(model, t.x, u_apply, t.w);
    const VecXd nom_next = model.step_nominal(x_nom, u_bar);
    const VecXd est_next = observer.predict(t.x_tilde, u_apply, y);
    const double lhs = clf.V.value(nom_next, est_next);
    const double rhs = clf.rho * clf.V.value(x_nom, t.x_tilde) +
                       gamma_so.value(ocert.Vo.value(t.x_tilde, t.x)) +
                       gamma_sw.value(model.w_bound);
    record(rep, t, lhs, rhs, opts.tolerance);
  }
  return rep;
}

}  // namespace rompc::cert
