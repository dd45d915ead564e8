#pragma once

// Independent brute-force references used by the unit and acceptance suites.
// These enumerate; they never call the solver paths they check.

#include <vector>

#include "rompc/setm/setmember.hpp"

namespace oracles {

using rompc::core::MatXd;
using rompc::core::PlantModel;
using rompc::core::VecXd;

// 2-D plant for the membership grid study: disturbance drives the velocity,
// the position is measured with amplified noise, so eliminating the
// measurement channel leaves (x_init, w_dyn per step) free -- a gridable
// space.
inline PlantModel membership_grid_model(double h = 0.1, double w_bar = 0.05) {
  PlantModel m;
  m.n_x = 2;
  m.n_u = 1;
  m.n_y = 1;
  m.n_w = 2;
  m.w_bound = w_bar;
  MatXd A(2, 2), B(2, 1), C(1, 2);
  A << 1.0, h, 0.0, 1.0;
  B << 0.0, h;
  C << 1.0, 0.0;
  m.step_nominal = [A, B](const VecXd& x, const VecXd& u) { return VecXd(A * x + B * u); };
  m.output_nominal = [C](const VecXd& x, const VecXd&) { return VecXd(C * x); };
  m.E_x = MatXd::Zero(2, 2);
  m.E_x(1, 0) = h;
  m.E_y = MatXd::Zero(1, 2);
  m.E_y(0, 1) = 0.5;
  m.step_jac_x = [A](const VecXd&, const VecXd&) { return A; };
  m.step_jac_u = [B](const VecXd&, const VecXd&) { return B; };
  m.output_jac_x = [C](const VecXd&, const VecXd&) { return C; };
  return m;
}

// Exhaustive maximization of Vo(x_hat_t, x_0) over the eliminated decision
// space (x_{-M} grid in the anchor box, dynamic noise grid per step), with a
// refinement pass around the best coarse cell.  Total evaluations stay below
// the given budget.
inline double membership_grid_oracle(const PlantModel& m,
                                     const rompc::setm::MembershipWindow& win,
                                     const rompc::cert::QuadraticForm& Vo,
                                     const VecXd& x_hat_t, double w_bar,
                                     int pts_per_dim, int refine_pts) {
  const int M = win.M;
  const double ey = m.E_y(0, 1);
  const double ex = m.E_x(1, 0);
  // Anchor box: ellipsoid circumscribed per coordinate.
  const double r0 = std::sqrt(win.anchor_e_bar / Vo.lambda_min());

  double best = -1.0;
  VecXd best_point = VecXd::Zero(2 + M);

  auto evaluate_grid = [&](const VecXd& center, const VecXd& half, int pts) {
    std::vector<int> idx(2 + M, 0);
    VecXd point(2 + M);
    while (true) {
      for (int d = 0; d < 2 + M; ++d) {
        const double frac = pts == 1 ? 0.5 : static_cast<double>(idx[d]) / (pts - 1);
        point[d] = center[d] - half[d] + 2.0 * half[d] * frac;
      }
      // Constraint screen + rollout.
      VecXd x(2);
      x << point[0], point[1];
      bool ok = Vo.value(x, win.anchor_x_hat) <= win.anchor_e_bar * (1.0 + 1e-9);
      for (int k = 0; ok && k < M; ++k) {
        const auto& [u, y] = win.records[k];
        const double w_meas = (y[0] - x[0]) / ey;
        const double w_dyn = point[2 + k];
        if (w_dyn * w_dyn + w_meas * w_meas > w_bar * w_bar * (1.0 + 1e-9)) {
          ok = false;
          break;
        }
        VecXd w(2);
        w << w_dyn, w_meas;
        x = rompc::core::model_step(m, x, u, w);
      }
      if (ok) {
        const double v = Vo.value(x_hat_t, x);
        if (v > best) {
          best = v;
          best_point = point;
        }
      }
      int d = 0;
      while (d < 2 + M && ++idx[d] == pts) idx[d++] = 0;
      if (d == 2 + M) break;
    }
  };

  VecXd center(2 + M), half(2 + M);
  center.head(2) = win.anchor_x_hat;
  center.tail(M).setZero();
  half.head(2).setConstant(r0);
  half.tail(M).setConstant(w_bar);
  evaluate_grid(center, half, pts_per_dim);

  // Refine around the best coarse cell.
  if (best >= 0.0) {
    VecXd half2 = half * (2.0 / (pts_per_dim - 1));
    evaluate_grid(best_point, half2, refine_pts);
  }
  return best;
}

}  // namespace oracles
