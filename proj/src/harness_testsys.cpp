#include "rompc/sim/systems.hpp"

namespace rompc::sim {

std::pair<PlantModel, ConstraintSet> build_double_integrator(double h, double w_bar) {
  PlantModel m;
  m.n_x = 2;
  m.n_u = 1;
  m.n_y = 1;
  m.n_w = 3;
  m.w_bound = w_bar;
  MatXd A(2, 2), B(2, 1), C(1, 2);
  A << 1.0, h, 0.0, 1.0;
  B << 0.0, h;
  C << 1.0, 0.0;
  m.step_nominal = [A, B](const VecXd& x, const VecXd& u) { return VecXd(A * x + B * u); };
  m.output_nominal = [C](const VecXd& x, const VecXd&) { return VecXd(C * x); };
  m.E_x = MatXd::Zero(2, 3);
  m.E_x.leftCols(2) = h * MatXd::Identity(2, 2);
  m.E_y = MatXd::Zero(1, 3);
  m.E_y(0, 2) = 0.5;
  m.step_jac_x = [A](const VecXd&, const VecXd&) { return A; };
  m.step_jac_u = [B](const VecXd&, const VecXd&) { return B; };
  m.output_jac_x = [C](const VecXd&, const VecXd&) { return C; };

  // x1 <= 1.5, |u| <= 3.
  std::vector<core::ConstraintFn> rows;
  VecXd a1(2), zu(1), zx(2), b1(1);
  a1 << 1.0, 0.0;
  zu << 0.0;
  zx << 0.0, 0.0;
  b1 << 1.0;
  rows.push_back(core::affine_constraint(a1, zu, -1.5));
  rows.push_back(core::affine_constraint(zx, b1, -3.0));
  rows.push_back(core::affine_constraint(zx, -b1, -3.0));
  std::vector<core::Gain> zeros(rows.size(), core::Gain::zero());
  return {std::move(m), ConstraintSet(rows, zeros, zeros)};
}

SystemBundle double_integrator_bundle(double w_bar, int N_for_calibration) {
  SystemBundle b;
  const double h = 0.1;
  auto [model, base_constraints] = build_double_integrator(h, w_bar);
  b.model = std::move(model);

  cert::LinearSynthesisInput in;
  MatXd A(2, 2);
  A << 1.0, h, 0.0, 1.0;
  in.A_vertices = {A};
  in.B = b.model.step_jac_u(VecXd::Zero(2), VecXd::Zero(1));
  in.C = b.model.output_jac_x(VecXd::Zero(2), VecXd::Zero(1));
  in.E_x = b.model.E_x;
  in.E_y = b.model.E_y;
  in.Q_lqr = MatXd::Identity(2, 2);
  in.R_lqr = 0.5 * MatXd::Identity(1, 1);
  in.Q_kal = MatXd::Identity(2, 2);
  in.R_kal = 2.0 * MatXd::Identity(1, 1);
  in.target_rho = 0.85;
  in.target_eta_tilde = 0.80;
  in.target_eta = 0.85;
  b.certs = cert::synthesize_linear_certificates(in);

  b.gains = tube::TubeGains{b.certs.gamma_so, b.certs.gamma_sw};
  b.rpi = tube::rpi_bounds(b.gains, b.certs.observer, b.certs.clf, w_bar);
  b.s_lo = std::pow(b.certs.clf.rho, N_for_calibration) * b.gains.gamma_sw.value(w_bar);

  std::vector<std::pair<VecXd, VecXd>> rows;
  VecXd a1(2), zu(1), zx(2), b1(1);
  a1 << 1.0, 0.0;
  zu << 0.0;
  zx << 0.0, 0.0;
  b1 << 1.0;
  rows.push_back({a1, zu});
  rows.push_back({zx, b1});
  rows.push_back({zx, -b1});
  auto [exact, superadd] =
      attach_affine_tightening(base_constraints, rows, b.certs.K, b.certs.clf.V,
                               b.certs.observer.Vo, b.s_lo);
  b.constraints = std::move(exact);
  b.constraints_superadd = std::move(superadd);

  b.x_s = VecXd::Zero(2);
  b.x_s[0] = 1.0;
  b.u_s = VecXd::Zero(1);
  b.x0_default = b.x_s;

  auto cal = calibrate_terminal_sublevel(b.certs, b.gains, b.rpi,
                                         b.constraints_superadd, rows, b.x_s, b.u_s,
                                         w_bar, N_for_calibration);
  b.terminal_c_f = cal.c_f_free;
  b.terminal_c_f_pinned = cal.c_f_pinned;
  b.pinned_terminal_ok = cal.pinned_ok;

  b.sample_template.x_center = b.x_s;
  b.sample_template.u_center = b.u_s;
  b.sample_template.radius = 2.0;
  b.sample_template.input_radius = 1.0;
  return b;
}

}  // namespace rompc::sim
