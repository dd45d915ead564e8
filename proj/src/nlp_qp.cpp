#include "rompc/nlp/qp.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace rompc::nlp {

using core::MatXd;
using core::VecXd;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Rotates d[j] into d[j-1] and applies the matching column rotation to J,
// preserving J' * n = d for every already-processed normal n.
void rotate_into(VecXd& d, MatXd& J, int j) {
  const double cc = d[j - 1];
  const double ss = d[j];
  const double h = std::hypot(cc, ss);
  if (h == 0.0) return;
  const double c = cc / h;
  const double s = ss / h;
  d[j - 1] = h;
  d[j] = 0.0;
  const VecXd col_a = J.col(j - 1);
  const VecXd col_b = J.col(j);
  J.col(j - 1) = c * col_a + s * col_b;
  J.col(j) = -s * col_a + c * col_b;
}

}  // namespace

QpResult solve_qp(const MatXd& G, const VecXd& g0, const MatXd& AE, const VecXd& bE,
                  const MatXd& AI, const VecXd& bI) {
  const int n = static_cast<int>(G.rows());
  const int p = static_cast<int>(AE.rows());
  const int m = static_cast<int>(AI.rows());
  if (G.cols() != n || g0.size() != n) throw std::invalid_argument("solve_qp: bad G/g0");
  if ((p > 0 && AE.cols() != n) || bE.size() != p)
    throw std::invalid_argument("solve_qp: bad equality block");
  if ((m > 0 && AI.cols() != n) || bI.size() != m)
    throw std::invalid_argument("solve_qp: bad inequality block");

  QpResult res;
  res.eq_multipliers = VecXd::Zero(p);
  res.ineq_multipliers = VecXd::Zero(m);

  Eigen::LLT<MatXd> llt(G);
  if (llt.info() != Eigen::Success) {
    // Damped-BFGS callers keep G positive definite; escalating ridges rescue
    // borderline conditioning.
    const double base = std::max(1.0, G.diagonal().cwiseAbs().maxCoeff());
    for (double ridge = 1e-10; ridge <= 1e-1; ridge *= 1e3) {
      llt.compute(G + ridge * base * MatXd::Identity(n, n));
      if (llt.info() == Eigen::Success) break;
    }
    if (llt.info() != Eigen::Success)
      throw std::invalid_argument("solve_qp: G not positive definite");
  }

  // Unconstrained minimum.
  VecXd x = llt.solve(-g0);
  // J = L^{-T}.
  MatXd J = llt.matrixU().solve(MatXd::Identity(n, n));

  MatXd R = MatXd::Zero(n, n);
  std::vector<int> active;  // constraint ids: 0..p-1 equalities, p+i inequalities
  VecXd u_active = VecXd::Zero(n + 1);
  int q = 0;

  const double scale = 1.0 + std::abs(g0.norm()) + G.diagonal().cwiseAbs().maxCoeff();
  const double tol_dep = 1e-12 * scale;

  // Normal of constraint id in the >= orientation used internally.
  auto normal_of = [&](int id) -> VecXd {
    if (id < p) return AE.row(id).transpose();
    return -AI.row(id - p).transpose();
  };
  auto rhs_of = [&](int id) -> double {
    if (id < p) return bE[id];
    return -bI[id - p];
  };

  auto add_to_factorization = [&](VecXd& d) -> bool {
    for (int j = n - 1; j >= q + 1; --j) rotate_into(d, J, j);
    if (std::abs(d[q]) < tol_dep) return false;
    R.col(q).head(q + 1) = d.head(q + 1);
    ++q;
    return true;
  };

  auto drop_from_factorization = [&](int l) {
    // Remove active column l, shift the remainder left, re-triangularize.
    for (int j = l; j + 1 < q; ++j) {
      R.col(j).head(q) = R.col(j + 1).head(q);
      active[j] = active[j + 1];
      u_active[j] = u_active[j + 1];
    }
    --q;
    active.resize(q);
    R.col(q).setZero();
    for (int j = l; j < q; ++j) {
      const double a = R(j, j);
      const double b = R(j + 1, j);
      const double h = std::hypot(a, b);
      if (h == 0.0) continue;
      const double c = a / h;
      const double s = b / h;
      for (int k = j; k < q; ++k) {
        const double t1 = R(j, k);
        const double t2 = R(j + 1, k);
        R(j, k) = c * t1 + s * t2;
        R(j + 1, k) = -s * t1 + c * t2;
      }
      const VecXd col_a = J.col(j);
      const VecXd col_b = J.col(j + 1);
      J.col(j) = c * col_a + s * col_b;
      J.col(j + 1) = -s * col_a + c * col_b;
    }
  };

  // --- Phase 1: install equality constraints -------------------------------
  for (int ei = 0; ei < p; ++ei) {
    const VecXd np = normal_of(ei);
    VecXd d = J.transpose() * np;
    VecXd z = J.rightCols(n - q) * d.tail(n - q);
    const double z_np = z.dot(np);
    const double resid = np.dot(x) - rhs_of(ei);
    if (z_np <= tol_dep) {
      if (std::abs(resid) > 1e-9 * (1.0 + std::abs(rhs_of(ei)))) {
        res.feasible = false;
        res.x = x;
        return res;  // inconsistent equalities
      }
      continue;  // dependent but consistent
    }
    const double t2 = -resid / z_np;
    VecXd r = VecXd::Zero(q);
    if (q > 0)
      r = R.topLeftCorner(q, q).triangularView<Eigen::Upper>().solve(d.head(q));
    x += t2 * z;
    for (int k = 0; k < q; ++k) u_active[k] -= t2 * r[k];
    u_active[q] = t2;
    active.push_back(ei);
    if (!add_to_factorization(d)) {
      active.pop_back();
      continue;
    }
  }

  // --- Phase 2: inequality loop ---------------------------------------------
  const int max_iter = 20 * (n + p + m + 1);
  std::vector<char> in_active(m, 0);
  for (int idx : active)
    if (idx >= p) in_active[idx - p] = 1;

  int iter = 0;
  while (true) {
    if (++iter > max_iter) break;

    // Most violated inactive inequality (in <= form: AI x - bI > 0).
    int ip = -1;
    double worst = 1e-11 * scale;
    for (int i = 0; i < m; ++i) {
      if (in_active[i]) continue;
      const double v = AI.row(i).dot(x) - bI[i];
      if (v > worst) {
        worst = v;
        ip = i;
      }
    }
    if (ip < 0) {
      res.feasible = true;
      break;
    }

    const int id = p + ip;
    const VecXd np = normal_of(id);
    double s_ip = np.dot(x) - rhs_of(id);  // negative while violated
    double u_plus = 0.0;

    while (true) {
      if (++iter > max_iter) { iter = max_iter + 1; break; }
      VecXd d = J.transpose() * np;
      VecXd z = J.rightCols(n - q) * d.tail(n - q);
      VecXd r = VecXd::Zero(q);
      if (q > 0)
        r = R.topLeftCorner(q, q).triangularView<Eigen::Upper>().solve(d.head(q));

      // Dual blocking step over active inequalities.
      double t1 = kInf;
      int l_block = -1;
      for (int k = 0; k < q; ++k) {
        if (active[k] < p) continue;
        if (r[k] > tol_dep) {
          const double ratio = u_active[k] / r[k];
          if (ratio < t1) {
            t1 = ratio;
            l_block = k;
          }
        }
      }

      const double z_np = z.dot(np);
      const double t2 = (z_np > tol_dep) ? -s_ip / z_np : kInf;
      const double t = std::min(t1, t2);

      if (t >= kInf) {
        res.feasible = false;  // no step restores feasibility: QP infeasible
        res.x = x;
        res.iterations = iter;
        return res;
      }

      if (t2 >= kInf) {
        // Dual-only step; drop the blocking constraint and retry.
        for (int k = 0; k < q; ++k) u_active[k] -= t * r[k];
        u_plus += t;
        in_active[active[l_block] - p] = 0;
        drop_from_factorization(l_block);
        continue;
      }

      x += t * z;
      for (int k = 0; k < q; ++k) u_active[k] -= t * r[k];
      u_plus += t;
      s_ip = np.dot(x) - rhs_of(id);

      if (t == t2) {
        u_active[q] = u_plus;
        active.push_back(id);
        in_active[ip] = 1;
        if (!add_to_factorization(d)) {
          active.pop_back();
          in_active[ip] = 0;
        }
        break;  // back to violation scan
      }

      // Partial step: drop the blocking constraint and continue on ip.
      in_active[active[l_block] - p] = 0;
      drop_from_factorization(l_block);
    }
    if (iter > max_iter) break;
  }

  if (iter > max_iter) {
    // Cycling guard; report whatever feasibility we reached.
    double worst = 0.0;
    for (int i = 0; i < m; ++i) worst = std::max(worst, AI.row(i).dot(x) - bI[i]);
    for (int i = 0; i < p; ++i) worst = std::max(worst, std::abs(AE.row(i).dot(x) - bE[i]));
    res.feasible = worst <= 1e-8 * scale;
  }

  res.x = x;
  res.objective = 0.5 * x.dot(G * x) + g0.dot(x);
  res.iterations = iter;
  // Multiplier convention: G x + g0 + AE' lam_eq + AI' lam_ineq = 0 with
  // lam_ineq >= 0 (internal >=-form normals flip the equality sign).
  for (int k = 0; k < q; ++k) {
    if (active[k] < p)
      res.eq_multipliers[active[k]] = -u_active[k];
    else
      res.ineq_multipliers[active[k] - p] = u_active[k];
  }
  return res;
}

}  // namespace rompc::nlp
