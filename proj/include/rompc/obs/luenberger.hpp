#pragma once

#include <Eigen/Dense>
#include <deque>
#include <stdexcept>

#include "rompc/cert/certificates.hpp"
#include "rompc/core/model.hpp"
#include "rompc/errors.hpp"

namespace rompc::obs {

using core::MatXd;
using core::PlantModel;
using core::VecXd;

// Moore-Penrose right inverse E' (E E')^{-1} of a full-row-rank matrix.
inline MatXd right_inverse(const MatXd& E) {
  const MatXd EEt = E * E.transpose();
  Eigen::FullPivLU<MatXd> lu(EEt);
  if (!lu.isInvertible())
    throw rompc::ModelRejectedError("E_x is not full row rank; one-step controllability fails");
  return E.transpose() * lu.inverse();
}

// Spectral norm of the right inverse, 1 / sigma_min(E).
inline double right_inverse_norm(const MatXd& E) {
  Eigen::JacobiSVD<MatXd> svd(E);
  const double smin = svd.singularValues().minCoeff();
  if (smin <= 1e-12 || svd.singularValues().size() < E.rows())
    throw rompc::ModelRejectedError("E_x is not full row rank");
  return 1.0 / smin;
}

// ============================================================================
// Luenberger-like observer
// ============================================================================
//   x^+ = f(x^, u) + L (h(x^, u) - y)

class LuenbergerObserver {
 public:
  LuenbergerObserver(const PlantModel& model, MatXd L, cert::ObserverCertificate cert)
      : model_(&model), L_(std::move(L)), cert_(std::move(cert)) {
    if (L_.rows() != model.n_x || L_.cols() != model.n_y)
      throw std::invalid_argument("LuenbergerObserver: L must be n_x x n_y");
    // One-step controllability w.r.t. w; without it the detectability-based
    // radius updates are unavailable (w^ cannot be reconstructed) while the
    // observer itself still runs.
    try {
      Ex_pinv_ = right_inverse(model.E_x);
    } catch (const ModelRejectedError&) {
      Ex_pinv_.resize(0, 0);
    }
  }

  const PlantModel& model() const { return *model_; }
  const MatXd& L() const { return L_; }
  const cert::ObserverCertificate& certificate() const { return cert_; }
  bool supports_ioss_updates() const { return Ex_pinv_.size() > 0; }
  const MatXd& Ex_pinv() const {
    if (!supports_ioss_updates())
      throw ModelRejectedError("E_x is not full row rank; w^ reconstruction unavailable");
    return Ex_pinv_;
  }

  // Output-injection term; zero when the estimate already explains y.
  VecXd injection(const VecXd& x_hat, const VecXd& u, const VecXd& y) const {
    return L_ * (model_->output_nominal(x_hat, u) - y);
  }

  VecXd predict(const VecXd& x_hat, const VecXd& u, const VecXd& y) const {
    return model_->step_nominal(x_hat, u) + injection(x_hat, u, y);
  }

 private:
  const PlantModel* model_;
  MatXd L_;
  cert::ObserverCertificate cert_;
  MatXd Ex_pinv_;
};

// One (u, y) step of estimator memory together with the reconstructed
// disturbance w^ = Ex^dagger L^(x^,u,y) and explained output y^ = h_w(x^,u,w^).
struct HistoryRecord {
  VecXd u;
  VecXd y;
  VecXd w_hat;
  VecXd y_hat;
};

// Estimate, certified radius (in Vo units), and a bounded history window.
struct EstimatorState {
  VecXd x_hat;
  double e_bar = 0.0;
  std::deque<HistoryRecord> history;  // newest at back
  std::size_t capacity = 1;
  long t = 0;

  const HistoryRecord& newest() const {
    if (history.empty()) throw std::invalid_argument("EstimatorState: empty history");
    return history.back();
  }

  // Record at lag j >= 1 (j = 1 is the newest).
  const HistoryRecord& lag(std::size_t j) const {
    if (j < 1 || j > history.size())
      throw std::invalid_argument("EstimatorState: history lag out of range");
    return history[history.size() - j];
  }
};

// Advances the observer one step.  e_bar is left unchanged; the error-bound
// updates are separate operations.
inline EstimatorState observer_step(const LuenbergerObserver& obs,
                                    const EstimatorState& st, const VecXd& u,
                                    const VecXd& y) {
  const PlantModel& m = obs.model();
  core::detail::require_dim(u, m.n_u, "u");
  core::detail::require_dim(y, m.n_y, "y");
  core::detail::require_dim(st.x_hat, m.n_x, "x_hat");

  EstimatorState out = st;
  const VecXd inj = obs.injection(st.x_hat, u, y);
  VecXd w_hat;  // empty when w^ is not reconstructible (rank-deficient E_x)
  VecXd y_hat;
  if (obs.supports_ioss_updates()) {
    w_hat = obs.Ex_pinv() * inj;
    y_hat = m.output_nominal(st.x_hat, u) + m.E_y * w_hat;
  } else {
    y_hat = m.output_nominal(st.x_hat, u);
  }

  out.x_hat = m.step_nominal(st.x_hat, u) + inj;
  out.history.push_back({u, y, w_hat, y_hat});
  while (out.history.size() > out.capacity) out.history.pop_front();
  out.t = st.t + 1;
  return out;
}

}  // namespace rompc::obs
