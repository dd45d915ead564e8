// Offline synthesis of the quadrotor certificate matrices.  Grids the tan
// nonlinearity into LPV vertices, finds common quadratic Lyapunov matrices by
// the bisection iteration, splits the decrease rates against the disturbance
// channels, and certifies the result by sampled falsification before writing
// the artifact.

#include <cstdio>
#include <string>

#include "rompc/cert/falsify.hpp"
#include "rompc/sim/sim.hpp"

using namespace rompc;

int main(int argc, char** argv) {
  std::string out = argc > 1 ? argv[1] : sim::default_quadrotor_certs();

  auto in = sim::quadrotor_synthesis_input(0.05);
  auto certs = cert::synthesize_linear_certificates(in);
  std::printf("clf vertex decay   %.6f (target rho %.3f)\n", certs.clf_vertex_decay,
              certs.clf.rho);
  std::printf("observer decay     %.6f (target eta~ %.3f)\n",
              certs.observer_vertex_decay, certs.observer.eta_tilde);

  // Write, reload through a bundle, and certify by sampling.
  sim::KeyValueConfig cfg;
  sim::save_certificates(certs, cfg);
  cfg.save(out);
  std::printf("wrote %s\n", out.c_str());

  auto b = sim::quadrotor_bundle(out);
  auto opts = b.make_sample_opts(10000, 1);
  const auto observer = b.make_observer();
  const auto r1 = cert::verify_ioss_decrease(b.model, b.certs.ioss, opts);
  const auto r2 = cert::verify_iss_clf(b.model, b.certs.clf, opts);
  const auto r3 = cert::verify_observer(b.model, observer, b.certs.observer, opts);
  const auto r4 = cert::verify_tube_cross(b.model, observer, b.certs.clf,
                                          b.certs.observer, b.gains.gamma_so,
                                          b.gains.gamma_sw, opts);
  std::printf("ioss: %zu violations, worst %.3e\n", r1.n_violations, r1.worst_residual);
  std::printf("clf : %zu violations, worst %.3e\n", r2.n_violations, r2.worst_residual);
  std::printf("obs : %zu violations, worst %.3e\n", r3.n_violations, r3.worst_residual);
  std::printf("tube: %zu violations, worst %.3e\n", r4.n_violations, r4.worst_residual);
  std::printf("e_max = %.6g  s_max = %.6g\n", b.rpi.e_max, b.rpi.s_max);

  const bool ok = r1.passed() && r2.passed() && r3.passed() && r4.passed();
  if (!ok) std::printf("CERTIFICATION FAILED\n");
  return ok ? 0 : 1;
}
