#include "rompc/core/model.hpp"

namespace rompc::core {

MatXd numeric_step_jac_x(const PlantModel& m, const VecXd& x, const VecXd& u,
                         double h) {
  MatXd J(m.n_x, m.n_x);
  VecXd xp = x, xm = x;
  for (int j = 0; j < m.n_x; ++j) {
    const double step = h * std::max(1.0, std::abs(x[j]));
    xp[j] = x[j] + step;
    xm[j] = x[j] - step;
    J.col(j) = (m.step_nominal(xp, u) - m.step_nominal(xm, u)) / (2.0 * step);
    xp[j] = x[j];
    xm[j] = x[j];
  }
  return J;
}

MatXd numeric_step_jac_u(const PlantModel& m, const VecXd& x, const VecXd& u,
                         double h) {
  MatXd J(m.n_x, m.n_u);
  VecXd up = u, um = u;
  for (int j = 0; j < m.n_u; ++j) {
    const double step = h * std::max(1.0, std::abs(u[j]));
    up[j] = u[j] + step;
    um[j] = u[j] - step;
    J.col(j) = (m.step_nominal(x, up) - m.step_nominal(x, um)) / (2.0 * step);
    up[j] = u[j];
    um[j] = u[j];
  }
  return J;
}

}  // namespace rompc::core
