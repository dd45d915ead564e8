#include <cmath>

#include "rompc/sim/systems.hpp"

namespace rompc::sim {

namespace {

constexpr double kD0 = 10.0;
constexpr double kD1 = 8.0;
constexpr double kN0 = 10.0;
constexpr double kKT = 0.91;
constexpr double kG = 9.8;
constexpr double kPhiMax = M_PI / 6.0;
constexpr double kUMax = M_PI / 9.0;

VecXd quad_rhs(const VecXd& x, const VecXd& u) {
  VecXd f(10);
  f[0] = x[5];
  f[1] = x[6];
  f[2] = x[7];
  f[3] = -kD1 * x[3] + x[8];
  f[4] = -kD1 * x[4] + x[9];
  f[5] = kG * std::tan(x[3]);
  f[6] = kG * std::tan(x[4]);
  f[7] = -kG + kKT * u[2];
  f[8] = -kD0 * x[3] + kN0 * u[0];
  f[9] = -kD0 * x[4] + kN0 * u[1];
  return f;
}

}  // namespace

std::pair<PlantModel, ConstraintSet> build_quadrotor(double h, double w_bar) {
  PlantModel m;
  m.n_x = 10;
  m.n_u = 3;
  m.n_y = 5;
  m.n_w = 15;
  m.w_bound = w_bar;
  m.step_nominal = [h](const VecXd& x, const VecXd& u) {
    return VecXd(x + h * quad_rhs(x, u));
  };
  m.output_nominal = [](const VecXd& x, const VecXd&) { return VecXd(x.head(5)); };
  m.E_x = MatXd::Zero(10, 15);
  m.E_x.leftCols(10) = h * MatXd::Identity(10, 10);
  m.E_y = MatXd::Zero(5, 15);
  m.E_y.rightCols(5) = 5.0 * MatXd::Identity(5, 5);

  m.step_jac_x = [h](const VecXd& x, const VecXd&) {
    MatXd J = MatXd::Identity(10, 10);
    J(0, 5) += h;
    J(1, 6) += h;
    J(2, 7) += h;
    J(3, 3) += -h * kD1;
    J(3, 8) += h;
    J(4, 4) += -h * kD1;
    J(4, 9) += h;
    const double s3 = std::cos(x[3]);
    const double s4 = std::cos(x[4]);
    J(5, 3) += h * kG / (s3 * s3);
    J(6, 4) += h * kG / (s4 * s4);
    J(8, 3) += -h * kD0;
    J(9, 4) += -h * kD0;
    return J;
  };
  m.step_jac_u = [h](const VecXd&, const VecXd&) {
    MatXd B = MatXd::Zero(10, 3);
    B(7, 2) = h * kKT;
    B(8, 0) = h * kN0;
    B(9, 1) = h * kN0;
    return B;
  };
  m.output_jac_x = [](const VecXd&, const VecXd&) {
    MatXd H = MatXd::Zero(5, 10);
    H.leftCols(5) = MatXd::Identity(5, 5);
    return H;
  };

  // z1 <= 4, |phi_i| <= pi/6, |u_{1,2}| <= pi/9, u3 in [0, 2g].
  std::vector<core::ConstraintFn> rows;
  std::vector<core::Gain> zeros;
  auto ax = [](int i) {
    VecXd a = VecXd::Zero(10);
    a[i] = 1.0;
    return a;
  };
  auto au = [](int i) {
    VecXd b = VecXd::Zero(3);
    b[i] = 1.0;
    return b;
  };
  const VecXd zx = VecXd::Zero(10);
  const VecXd zu = VecXd::Zero(3);
  rows.push_back(core::affine_constraint(ax(0), zu, -4.0));
  rows.push_back(core::affine_constraint(ax(3), zu, -kPhiMax));
  rows.push_back(core::affine_constraint(-ax(3), zu, -kPhiMax));
  rows.push_back(core::affine_constraint(ax(4), zu, -kPhiMax));
  rows.push_back(core::affine_constraint(-ax(4), zu, -kPhiMax));
  rows.push_back(core::affine_constraint(zx, au(0), -kUMax));
  rows.push_back(core::affine_constraint(zx, -au(0), -kUMax));
  rows.push_back(core::affine_constraint(zx, au(1), -kUMax));
  rows.push_back(core::affine_constraint(zx, -au(1), -kUMax));
  rows.push_back(core::affine_constraint(zx, -au(2), 0.0));
  rows.push_back(core::affine_constraint(zx, au(2), -2.0 * kG));
  zeros.assign(rows.size(), core::Gain::zero());
  return {std::move(m), ConstraintSet(std::move(rows), zeros, zeros)};
}

namespace {

// Affine-row data mirroring build_quadrotor's constraint list, used to attach
// tightening gains once certificates are known.
std::vector<std::pair<VecXd, VecXd>> quadrotor_rows() {
  std::vector<std::pair<VecXd, VecXd>> rows;
  auto ax = [](int i) {
    VecXd a = VecXd::Zero(10);
    a[i] = 1.0;
    return a;
  };
  auto au = [](int i) {
    VecXd b = VecXd::Zero(3);
    b[i] = 1.0;
    return b;
  };
  const VecXd zx = VecXd::Zero(10);
  const VecXd zu = VecXd::Zero(3);
  rows.push_back({ax(0), zu});
  rows.push_back({ax(3), zu});
  rows.push_back({-ax(3), zu});
  rows.push_back({ax(4), zu});
  rows.push_back({-ax(4), zu});
  rows.push_back({zx, au(0)});
  rows.push_back({zx, -au(0)});
  rows.push_back({zx, au(1)});
  rows.push_back({zx, -au(1)});
  rows.push_back({zx, -au(2)});
  rows.push_back({zx, au(2)});
  return rows;
}

}  // namespace

TerminalCalibration calibrate_terminal_sublevel(
    const cert::SynthesizedCertificates& certs, const tube::TubeGains& gains,
    const tube::RpiBounds& rpi, const ConstraintSet& tightened_rows,
    const std::vector<std::pair<VecXd, VecXd>>& affine_rows, const VecXd& x_s,
    const VecXd& u_s, double w_bar, int N) {
  const MatXd Pd_inv = certs.clf.V.matrix().llt().solve(
      MatXd::Identity(certs.clf.V.dim(), certs.clf.V.dim()));
  TerminalCalibration out;

  // Row cap: g_i(x_s, u_s) + row-slope * sqrt(c_f) + tightening(at the caps)
  // must stay nonpositive over the sublevel.
  double sqrt_cf_max = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < affine_rows.size(); ++i) {
    const VecXd r = affine_rows[i].first +
                    certs.K.transpose() * affine_rows[i].second;
    const double slope = std::sqrt(std::max(0.0, r.dot(Pd_inv * r)));
    const double slack =
        -tightened_rows.row(static_cast<int>(i)).g(x_s, u_s) -
        tightened_rows.tightening_s(static_cast<int>(i)).value(rpi.s_max) -
        tightened_rows.tightening_o(static_cast<int>(i)).value(rpi.e_max);
    if (slope <= 1e-12) {
      if (slack < 0.0) return out;  // setpoint itself violates the tightening
      continue;
    }
    if (slack <= 0.0) return out;
    sqrt_cf_max = std::min(sqrt_cf_max, slack / slope);
  }
  if (!std::isfinite(sqrt_cf_max)) sqrt_cf_max = 1.0;
  out.c_f_free = std::pow(0.9 * sqrt_cf_max, 2);

  // Pinned variant: the set must absorb the discounted tube drift per step.
  const double rho_hat =
      certs.clf_vertex_decay > 0.0 ? certs.clf_vertex_decay : certs.clf.rho;
  const double drift = std::pow(certs.clf.rho, N) *
                       (gains.gamma_so.value(rpi.e_max) + gains.gamma_sw.value(w_bar));
  const double cf_min = drift / std::pow(1.0 - std::sqrt(rho_hat), 2);
  if (1.1 * cf_min <= out.c_f_free) {
    out.c_f_pinned = std::max(1.1 * cf_min, 0.25 * out.c_f_free);
    out.pinned_ok = true;
  }
  return out;
}

double verify_terminal_sublevel(const PlantModel& model,
                                const cert::SynthesizedCertificates& certs,
                                const tube::TubeGains& gains,
                                const tube::RpiBounds& rpi,
                                const ConstraintSet& tightened_rows, const VecXd& x_s,
                                const VecXd& u_s, double c_f, double drift,
                                std::size_t samples, std::uint64_t seed) {
  core::Rng rng(seed);
  const int n = model.n_x;
  Eigen::SelfAdjointEigenSolver<MatXd> es(certs.clf.V.matrix());
  const MatXd shape = es.eigenvectors() *
                      es.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal();
  double worst = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < samples; ++i) {
    // Sample on and inside the sublevel boundary.
    VecXd z = rng.sphere(n, 1.0) * std::sqrt(c_f) *
              (i % 2 == 0 ? 1.0 : std::sqrt(rng.uniform01()));
    const VecXd x_bar = x_s + shape * z;
    const VecXd u = certs.clf.kappa(x_bar, x_s, u_s);  // terminal law
    for (int r = 0; r < tightened_rows.rows(); ++r) {
      const double v = tightened_rows.row(r).g(x_bar, u) +
                       tightened_rows.tightening_s(r).value(rpi.s_max) +
                       tightened_rows.tightening_o(r).value(rpi.e_max);
      worst = std::max(worst, v);
    }
    const VecXd x_next = model.step_nominal(x_bar, u);
    const double inv =
        std::pow(std::sqrt(certs.clf.V.value(x_next, x_s)) + std::sqrt(drift), 2) - c_f;
    worst = std::max(worst, inv);
  }
  return worst;
}

std::pair<ConstraintSet, ConstraintSet> attach_affine_tightening(
    const ConstraintSet& base, const std::vector<std::pair<VecXd, VecXd>>& rows,
    const MatXd& K, const cert::QuadraticForm& Pd, const cert::QuadraticForm& Po,
    double s_lo) {
  // Row-exact constants: |r'(x^ - x-)| <= |r|_{P^-1} |x^ - x-|_P, so the
  // P^{-1}-weighted row norm is the sharp coefficient per row.
  const MatXd Pd_inv = Pd.matrix().llt().solve(MatXd::Identity(Pd.dim(), Pd.dim()));
  const MatXd Po_inv = Po.matrix().llt().solve(MatXd::Identity(Po.dim(), Po.dim()));
  std::vector<core::ConstraintFn> fns;
  std::vector<core::Gain> sig_s, sig_o, sig_s_lin;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    fns.push_back(base.row(static_cast<int>(i)));
    const VecXd a = rows[i].first;
    const double ca = std::sqrt(std::max(0.0, a.dot(Po_inv * a)));
    const VecXd akb = a + K.transpose() * rows[i].second;
    const double cs = std::sqrt(std::max(0.0, akb.dot(Pd_inv * akb)));
    sig_o.push_back(ca > 1e-14 ? core::Gain(ca, 0.5) : core::Gain::zero());
    sig_s.push_back(cs > 1e-14 ? core::Gain(cs, 0.5) : core::Gain::zero());
    const double s_floor = std::max(s_lo, 1e-12);
    sig_s_lin.push_back(cs > 1e-14 ? core::Gain::linear(cs / std::sqrt(s_floor))
                                   : core::Gain::zero());
  }
  ConstraintSet exact(fns, sig_s, sig_o);
  ConstraintSet superadd(fns, sig_s_lin, sig_o);
  return {std::move(exact), std::move(superadd)};
}

void save_certificates(const cert::SynthesizedCertificates& c, KeyValueConfig& cfg) {
  cfg.set_matrix("certs.P_delta", c.clf.V.matrix());
  cfg.set_matrix("certs.P_o", c.observer.Vo.matrix());
  cfg.set_matrix("certs.K", c.K);
  cfg.set_matrix("certs.L", c.L);
  cfg.set_double("certs.rho", c.clf.rho);
  cfg.set_double("certs.eta_tilde", c.observer.eta_tilde);
  cfg.set_double("certs.eta", c.ioss.eta);
  cfg.set_gain("certs.sigma1", c.ioss.sigma1);
  cfg.set_gain("certs.sigma2", c.ioss.sigma2);
  cfg.set_gain("certs.sigma3", c.clf.sigma3);
  cfg.set_gain("certs.sigma4", c.observer.sigma4);
  cfg.set_gain("certs.gamma_L1", c.observer.gamma_L1);
  cfg.set_gain("certs.gamma_L2", c.observer.gamma_L2);
  cfg.set_gain("certs.gamma_so", c.gamma_so);
  cfg.set_gain("certs.gamma_sw", c.gamma_sw);
  cfg.set_double("certs.clf_vertex_decay", c.clf_vertex_decay);
  cfg.set_double("certs.observer_vertex_decay", c.observer_vertex_decay);
}

cert::SynthesizedCertificates load_certificates(const KeyValueConfig& cfg) {
  cert::SynthesizedCertificates c;
  const cert::QuadraticForm Pd(cfg.get_matrix("certs.P_delta"));
  const cert::QuadraticForm Po(cfg.get_matrix("certs.P_o"));
  c.K = cfg.get_matrix("certs.K");
  c.L = cfg.get_matrix("certs.L");
  c.clf = cert::IssClfCertificate(Pd, cfg.get_double("certs.rho"),
                                  cfg.get_gain("certs.sigma3"), c.K);
  c.observer = cert::ObserverCertificate(
      Po, cfg.get_double("certs.eta_tilde"), cfg.get_gain("certs.sigma4"),
      cfg.get_gain("certs.gamma_L1"), cfg.get_gain("certs.gamma_L2"));
  c.ioss = cert::IossCertificate(Po, cfg.get_double("certs.eta"),
                                 cfg.get_gain("certs.sigma1"),
                                 cfg.get_gain("certs.sigma2"));
  c.gamma_so = cfg.get_gain("certs.gamma_so");
  c.gamma_sw = cfg.get_gain("certs.gamma_sw");
  c.clf_vertex_decay = cfg.get_double("certs.clf_vertex_decay", 0.0);
  c.observer_vertex_decay = cfg.get_double("certs.observer_vertex_decay", 0.0);
  return c;
}

cert::LinearSynthesisInput quadrotor_synthesis_input(double h) {
  cert::LinearSynthesisInput in;
  auto [model, cs] = build_quadrotor(h);
  // LPV vertices of the tan slope g / cos(phi)^2 over |phi| <= pi/6.
  const double slope_lo = kG;
  const double slope_hi = kG / std::pow(std::cos(kPhiMax), 2);
  for (const double s3 : {slope_lo, slope_hi}) {
    for (const double s4 : {slope_lo, slope_hi}) {
      MatXd J = MatXd::Identity(10, 10);
      J(0, 5) += h;
      J(1, 6) += h;
      J(2, 7) += h;
      J(3, 3) += -h * kD1;
      J(3, 8) += h;
      J(4, 4) += -h * kD1;
      J(4, 9) += h;
      J(5, 3) += h * s3;
      J(6, 4) += h * s4;
      J(8, 3) += -h * kD0;
      J(9, 4) += -h * kD0;
      in.A_vertices.push_back(J);
    }
  }
  in.B = model.step_jac_u(VecXd::Zero(10), VecXd::Zero(3));
  in.C = model.output_jac_x(VecXd::Zero(10), VecXd::Zero(3));
  in.E_x = model.E_x;
  in.E_y = model.E_y;
  // Weights tuned so every constraint row keeps positive margin under the
  // worst-case radii; the resulting matrices are certified by sampling, not
  // by this construction.
  in.Q_lqr = MatXd::Identity(10, 10);
  in.Q_lqr(0, 0) = in.Q_lqr(1, 1) = in.Q_lqr(2, 2) = 4.0;
  MatXd R_lqr = MatXd::Identity(3, 3);
  R_lqr(0, 0) = R_lqr(1, 1) = 3.0;
  R_lqr(2, 2) = 0.5;
  in.R_lqr = R_lqr;
  in.Q_kal = MatXd::Identity(10, 10);
  in.R_kal = 200.0 * MatXd::Identity(5, 5);
  return in;
}

std::string default_quadrotor_certs() {
  return std::string(ROMPC_SOURCE_DIR) + "/data/quadrotor_certs.cfg";
}

SystemBundle quadrotor_bundle(const std::string& cert_path, double w_bar,
                              int N_for_calibration) {
  SystemBundle b;
  auto [model, base_constraints] = build_quadrotor(0.05, w_bar);
  b.model = std::move(model);

  if (!cert_path.empty()) {
    b.certs = load_certificates(KeyValueConfig::load(cert_path));
  } else {
    b.certs = cert::synthesize_linear_certificates(quadrotor_synthesis_input(0.05));
  }
  b.gains = tube::TubeGains{b.certs.gamma_so, b.certs.gamma_sw};
  b.rpi = tube::rpi_bounds(b.gains, b.certs.observer, b.certs.clf, w_bar);

  b.s_lo = std::pow(b.certs.clf.rho, N_for_calibration) * b.gains.gamma_sw.value(w_bar);
  auto [exact, superadd] =
      attach_affine_tightening(base_constraints, quadrotor_rows(), b.certs.K,
                               b.certs.clf.V, b.certs.observer.Vo, b.s_lo);
  b.constraints = std::move(exact);
  b.constraints_superadd = std::move(superadd);

  b.x_s = VecXd::Zero(10);
  b.x_s[0] = 3.7;
  b.x_s[1] = 3.0;
  b.x_s[2] = 10.0;
  b.u_s = VecXd::Zero(3);
  b.u_s[2] = kG / kKT;
  b.x0_default = b.x_s;

  auto cal = calibrate_terminal_sublevel(b.certs, b.gains, b.rpi, b.constraints,
                                         quadrotor_rows(), b.x_s, b.u_s, w_bar,
                                         N_for_calibration);
  b.terminal_c_f = cal.c_f_free;
  b.terminal_c_f_pinned = cal.c_f_pinned;
  b.pinned_terminal_ok = cal.pinned_ok;

  b.sample_template.x_center = b.x_s;
  b.sample_template.u_center = b.u_s;
  b.sample_template.radius = 2.0;
  b.sample_template.input_radius = 0.3;
  VecXd xlo = VecXd::Constant(10, -1e30), xhi = VecXd::Constant(10, 1e30);
  xlo[3] = xlo[4] = -kPhiMax;
  xhi[3] = xhi[4] = kPhiMax;
  b.sample_template.x_lower = xlo;
  b.sample_template.x_upper = xhi;
  VecXd ulo(3), uhi(3);
  ulo << -kUMax, -kUMax, 0.0;
  uhi << kUMax, kUMax, 2.0 * kG;
  b.sample_template.u_lower = ulo;
  b.sample_template.u_upper = uhi;
  return b;
}

mhe::MheConfig SystemBundle::make_mhe_config(int M) const {
  // Continuity modulus of the quadratic certificate on the e_max sublevel:
  // sigma_delta(r) = lmax r^2 + 2 sqrt(lmax e_max) r.
  const double lmax = certs.ioss.W.lambda_max();
  const double e_max = rpi.e_max;
  core::Gain sigma_delta(std::vector<core::Gain::Term>{
      {lmax, 2.0}, {2.0 * std::sqrt(lmax * std::max(e_max, 0.0)), 1.0}});
  return mhe::MheConfig(M, certs.ioss, sigma_delta);
}

cert::SampleOpts SystemBundle::make_sample_opts(std::size_t count,
                                                std::uint64_t seed) const {
  cert::SampleOpts o = sample_template;
  o.count = count;
  o.seed = seed;
  return o;
}

}  // namespace rompc::sim
