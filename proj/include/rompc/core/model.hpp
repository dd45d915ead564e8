#pragma once

#include <Eigen/Core>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>

namespace rompc::core {

using VecXd = Eigen::VectorXd;
using MatXd = Eigen::MatrixXd;

// ============================================================================
// Plant model
// ============================================================================
// Discrete-time plant with affine disturbance channels:
//   x+ = step_nominal(x, u) + E_x * w
//   y  = output_nominal(x, u) + E_y * w
// step_nominal / output_nominal are the nominal maps f, h; the full perturbed
// maps are recovered through model_step / model_output.

struct PlantModel {
  int n_x = 0;
  int n_u = 0;
  int n_y = 0;
  int n_w = 0;

  std::function<VecXd(const VecXd&, const VecXd&)> step_nominal;
  std::function<VecXd(const VecXd&, const VecXd&)> output_nominal;

  MatXd E_x;  // n_x x n_w
  MatXd E_y;  // n_y x n_w

  double w_bound = 0.0;  // 2-norm bound on w

  // Optional analytic Jacobians of step_nominal; transcriptions fall back to
  // central finite differences when absent.
  std::function<MatXd(const VecXd&, const VecXd&)> step_jac_x;  // n_x x n_x
  std::function<MatXd(const VecXd&, const VecXd&)> step_jac_u;  // n_x x n_u
  // Jacobian of output_nominal w.r.t. x (outputs here never depend on u
  // nonlinearly; affine output maps provide it directly).
  std::function<MatXd(const VecXd&, const VecXd&)> output_jac_x;  // n_y x n_x

  void check_dims() const {
    if (n_x <= 0 || n_u < 0 || n_y < 0 || n_w < 0)
      throw std::invalid_argument("PlantModel: bad dimensions");
    if (E_x.rows() != n_x || E_x.cols() != n_w)
      throw std::invalid_argument("PlantModel: E_x must be n_x x n_w");
    if (E_y.rows() != n_y || E_y.cols() != n_w)
      throw std::invalid_argument("PlantModel: E_y must be n_y x n_w");
    if (w_bound < 0.0) throw std::invalid_argument("PlantModel: w_bound must be >= 0");
  }
};

namespace detail {
inline void require_dim(const VecXd& v, int n, const char* name) {
  if (v.size() != n)
    throw std::invalid_argument(std::string("dimension mismatch for ") + name +
                                ": expected " + std::to_string(n) + ", got " +
                                std::to_string(v.size()));
}
}  // namespace detail

// x+ = f(x, u) + E_x w
inline VecXd model_step(const PlantModel& m, const VecXd& x, const VecXd& u,
                        const VecXd& w) {
  detail::require_dim(x, m.n_x, "x");
  detail::require_dim(u, m.n_u, "u");
  detail::require_dim(w, m.n_w, "w");
  return m.step_nominal(x, u) + m.E_x * w;
}

// y = h(x, u) + E_y w
inline VecXd model_output(const PlantModel& m, const VecXd& x, const VecXd& u,
                          const VecXd& w) {
  detail::require_dim(x, m.n_x, "x");
  detail::require_dim(u, m.n_u, "u");
  detail::require_dim(w, m.n_w, "w");
  return m.output_nominal(x, u) + m.E_y * w;
}

// Central finite-difference Jacobians used when analytic ones are absent.
MatXd numeric_step_jac_x(const PlantModel& m, const VecXd& x, const VecXd& u,
                         double h = 1e-6);
MatXd numeric_step_jac_u(const PlantModel& m, const VecXd& x, const VecXd& u,
                         double h = 1e-6);

inline MatXd step_jacobian_x(const PlantModel& m, const VecXd& x, const VecXd& u) {
  return m.step_jac_x ? m.step_jac_x(x, u) : numeric_step_jac_x(m, x, u);
}
inline MatXd step_jacobian_u(const PlantModel& m, const VecXd& x, const VecXd& u) {
  return m.step_jac_u ? m.step_jac_u(x, u) : numeric_step_jac_u(m, x, u);
}

}  // namespace rompc::core
