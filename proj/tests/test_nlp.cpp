#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "rompc/core/rng.hpp"
#include "rompc/nlp/qp.hpp"
#include "rompc/nlp/sqp.hpp"

using namespace rompc;
using core::MatXd;
using core::Rng;
using core::VecXd;

namespace {

// Exact QP reference by enumerating active sets of the KKT system.
struct OracleResult {
  bool feasible = false;
  double objective = 0.0;
  VecXd x;
};

OracleResult qp_oracle(const MatXd& G, const VecXd& g0, const MatXd& AE,
                       const VecXd& bE, const MatXd& AI, const VecXd& bI) {
  const int n = static_cast<int>(G.rows());
  const int me = static_cast<int>(AE.rows());
  const int mi = static_cast<int>(AI.rows());
  OracleResult best;
  for (unsigned mask = 0; mask < (1u << mi); ++mask) {
    std::vector<int> act;
    for (int i = 0; i < mi; ++i)
      if (mask & (1u << i)) act.push_back(i);
    const int na = me + static_cast<int>(act.size());
    MatXd K = MatXd::Zero(n + na, n + na);
    VecXd rhs = VecXd::Zero(n + na);
    K.topLeftCorner(n, n) = G;
    rhs.head(n) = -g0;
    int row = n;
    for (int i = 0; i < me; ++i, ++row) {
      K.block(row, 0, 1, n) = AE.row(i);
      K.block(0, row, n, 1) = AE.row(i).transpose();
      rhs[row] = bE[i];
    }
    for (int i : act) {
      K.block(row, 0, 1, n) = AI.row(i);
      K.block(0, row, n, 1) = AI.row(i).transpose();
      rhs[row] = bI[i];
      ++row;
    }
    Eigen::FullPivLU<MatXd> lu(K);
    if (!lu.isInvertible()) continue;
    const VecXd sol = lu.solve(rhs);
    const VecXd x = sol.head(n);
    bool ok = true;
    for (int i = 0; i < mi; ++i)
      if (AI.row(i).dot(x) > bI[i] + 1e-8) ok = false;
    int k = n + me;
    for (int i : act) {
      (void)i;
      if (sol[k] < -1e-8) ok = false;  // multiplier sign for <= rows
      ++k;
    }
    if (!ok) continue;
    const double obj = 0.5 * x.dot(G * x) + g0.dot(x);
    if (!best.feasible || obj < best.objective - 1e-12) {
      best.feasible = true;
      best.objective = obj;
      best.x = x;
    }
  }
  return best;
}

}  // namespace

TEST_CASE("qp solver agrees with the active-set enumeration oracle") {
  Rng rng(42);
  int solved = 0;
  for (int trial = 0; trial < 400; ++trial) {
    const int n = 2 + static_cast<int>(rng.uniform01() * 4);
    const int me = rng.uniform01() < 0.4 ? 1 : 0;
    const int mi = static_cast<int>(rng.uniform01() * 7);
    MatXd A(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) A(i, j) = rng.normal();
    const MatXd G = A.transpose() * A + MatXd::Identity(n, n);
    VecXd g0 = rng.normal_vec(n);
    MatXd AE(me, n), AI(mi, n);
    VecXd bE(me), bI(mi);
    for (int i = 0; i < me; ++i) {
      AE.row(i) = rng.normal_vec(n).transpose();
      bE[i] = rng.normal();
    }
    for (int i = 0; i < mi; ++i) {
      AI.row(i) = rng.normal_vec(n).transpose();
      bI[i] = rng.normal() + 1.0;
    }
    const auto oracle = qp_oracle(G, g0, AE, bE, AI, bI);
    const auto gi = nlp::solve_qp(G, g0, AE, bE, AI, bI);
    REQUIRE(gi.feasible == oracle.feasible);
    if (oracle.feasible) {
      CHECK(gi.objective == doctest::Approx(oracle.objective).epsilon(1e-6));
      CHECK((gi.x - oracle.x).norm() <= 1e-5 * (1.0 + oracle.x.norm()));
      ++solved;
    }
  }
  CHECK(solved > 300);  // the random family is almost always feasible
}

TEST_CASE("qp solver detects infeasibility") {
  MatXd G = MatXd::Identity(1, 1);
  VecXd g0 = VecXd::Zero(1);
  MatXd AI(2, 1);
  AI << 1.0, -1.0;
  VecXd bI(2);
  bI << -1.0, -1.0;  // x <= -1 and x >= 1
  const auto r = nlp::solve_qp(G, g0, MatXd(0, 1), VecXd(0), AI, bI);
  CHECK_FALSE(r.feasible);
}

TEST_CASE("sqp: quadratic bowl") {
  nlp::NlpProblem p;
  p.n_vars = 1;
  p.objective.value = [](const VecXd& v) { return (v[0] - 3.0) * (v[0] - 3.0); };
  p.objective.gradient = [](const VecXd& v) {
    VecXd g(1);
    g[0] = 2.0 * (v[0] - 3.0);
    return g;
  };
  auto s = nlp::solve(p, VecXd::Zero(1));
  CHECK(s.status == nlp::SolveStatus::converged);
  CHECK(s.vars[0] == doctest::Approx(3.0).epsilon(1e-7));
  CHECK(s.objective_value == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("sqp: linear objective on the unit circle (equality constrained)") {
  nlp::NlpProblem p;
  p.n_vars = 2;
  p.objective.value = [](const VecXd& v) { return v[0] + v[1]; };
  p.objective.gradient = [](const VecXd&) {
    VecXd g(2);
    g << 1.0, 1.0;
    return g;
  };
  p.eq_constraints.push_back(
      {[](const VecXd& v) { return v.squaredNorm() - 1.0; },
       [](const VecXd& v) { return VecXd(2.0 * v); }});
  VecXd init(2);
  init << 0.0, -1.0;
  auto s = nlp::solve(p, init);
  const double r = -std::sqrt(2.0) / 2.0;
  CHECK(s.vars[0] == doctest::Approx(r).epsilon(1e-6));
  CHECK(s.vars[1] == doctest::Approx(r).epsilon(1e-6));
  CHECK(s.objective_value == doctest::Approx(-std::sqrt(2.0)).epsilon(1e-7));
  CHECK(s.max_eq_violation <= 1e-6);
}

TEST_CASE("sqp: norm maximization in a shifted ball (set-membership toy)") {
  // max |v|^2 s.t. |v - c| <= r  ->  v* = c (1 + r/|c|), value (|c| + r)^2.
  VecXd c(2);
  c << 2.0, 1.0;
  const double r = 0.5;
  nlp::NlpProblem p;
  p.n_vars = 2;
  p.objective.value = [](const VecXd& v) { return -v.squaredNorm(); };
  p.objective.gradient = [](const VecXd& v) { return VecXd(-2.0 * v); };
  p.ineq_constraints.push_back(
      {[c, r](const VecXd& v) { return (v - c).squaredNorm() - r * r; },
       [c](const VecXd& v) { return VecXd(2.0 * (v - c)); }});

  const double expect = std::pow(c.norm() + r, 2);
  // Antipodal starts land in the same optimum (convex feasible set).
  for (const double sign : {1.0, -1.0}) {
    auto s = nlp::solve(p, VecXd(sign * c));
    CHECK(-s.objective_value == doctest::Approx(expect).epsilon(1e-6));
    CHECK((s.vars - c * (1.0 + r / c.norm())).norm() <= 1e-4);
  }
}

TEST_CASE("sqp multistart: smooth bimodal objective picks the global basin") {
  nlp::NlpProblem p;
  p.n_vars = 1;
  // Smooth min of v^2 and (v-10)^2 + 1 via log-sum-exp; no analytic gradient
  // (exercises the finite-difference fallback).
  p.objective.value = [](const VecXd& v) {
    const double a = v[0] * v[0];
    const double b = (v[0] - 10.0) * (v[0] - 10.0) + 1.0;
    return -std::log(std::exp(-a) + std::exp(-b));
  };
  std::vector<VecXd> starts{VecXd::Zero(1), VecXd::Constant(1, 10.0)};
  auto s = nlp::solve_multistart(p, starts);
  CHECK(std::abs(s.vars[0]) < 1.0);  // global basin at 0

  // Single start reduces to solve.
  auto s0 = nlp::solve(p, starts[1]);
  auto s1 = nlp::solve_multistart(p, {starts[1]});
  CHECK(s0.objective_value == s1.objective_value);
  CHECK((s0.vars - s1.vars).norm() == 0.0);
}

TEST_CASE("sqp honors the merit and honesty contracts on random problems") {
  Rng rng(7);
  for (int trial = 0; trial < 60; ++trial) {
    const int n = 2 + static_cast<int>(rng.uniform01() * 3);
    MatXd A(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) A(i, j) = rng.normal();
    const MatXd Q = A.transpose() * A + MatXd::Identity(n, n);
    const VecXd target = rng.normal_vec(n);
    nlp::NlpProblem p;
    p.n_vars = n;
    p.objective.value = [Q, target](const VecXd& v) {
      return 0.5 * (v - target).dot(Q * (v - target));
    };
    p.objective.gradient = [Q, target](const VecXd& v) { return VecXd(Q * (v - target)); };
    const double radius = 0.5 + rng.uniform01();
    p.ineq_constraints.push_back(
        {[radius](const VecXd& v) { return v.squaredNorm() - radius * radius; },
         [](const VecXd& v) { return VecXd(2.0 * v); }});
    const VecXd init = rng.normal_vec(n);

    auto s = nlp::solve(p, init);
    CHECK(s.merit_returned <= s.merit_init + 1e-10);

    // Feasibility honesty: reported violations equal re-evaluated residuals.
    double ineq = 0.0;
    for (const auto& c : p.ineq_constraints)
      ineq = std::max(ineq, std::max(0.0, c.value(s.vars)));
    CHECK(s.max_ineq_violation == doctest::Approx(ineq).epsilon(1e-14));
    CHECK(s.objective_value == doctest::Approx(p.objective.value(s.vars)).epsilon(1e-14));
  }
}

TEST_CASE("sqp is deterministic") {
  nlp::NlpProblem p;
  p.n_vars = 3;
  p.objective.value = [](const VecXd& v) {
    return std::pow(v[0] - 1, 2) + std::pow(v[1] + 2, 4) + v[2] * v[2] +
           0.3 * std::sin(v[0] * v[1]);
  };
  p.ineq_constraints.push_back(
      {[](const VecXd& v) { return v.squaredNorm() - 4.0; }, nullptr});
  VecXd init(3);
  init << 0.3, -0.2, 0.9;
  auto a = nlp::solve(p, init);
  auto b = nlp::solve(p, init);
  REQUIRE(a.vars.size() == b.vars.size());
  for (int i = 0; i < a.vars.size(); ++i) CHECK(a.vars[i] == b.vars[i]);
  CHECK(a.objective_value == b.objective_value);
  CHECK(a.iterations == b.iterations);
}

TEST_CASE("sqp respects variable bounds and flags bad inits") {
  nlp::NlpProblem p;
  p.n_vars = 2;
  p.objective.value = [](const VecXd& v) { return (v - VecXd::Constant(2, 5.0)).squaredNorm(); };
  p.objective.gradient = [](const VecXd& v) {
    return VecXd(2.0 * (v - VecXd::Constant(2, 5.0)));
  };
  p.lower = VecXd::Constant(2, -1.0);
  p.upper = VecXd::Constant(2, 1.0);
  auto s = nlp::solve(p, VecXd::Zero(2));
  CHECK(s.vars[0] == doctest::Approx(1.0).epsilon(1e-7));
  CHECK(s.vars[1] == doctest::Approx(1.0).epsilon(1e-7));
  CHECK_THROWS_AS(nlp::solve(p, VecXd::Constant(2, 3.0)), std::invalid_argument);
}

TEST_CASE("evaluation errors surface as exceptions") {
  nlp::NlpProblem p;
  p.n_vars = 1;
  p.objective.value = [](const VecXd& v) { return std::log(v[0]); };  // nan at init
  CHECK_THROWS_AS(nlp::solve(p, VecXd::Constant(1, -1.0)), EvaluationError);
}

TEST_CASE("gradient self-check flags inconsistent gradients") {
  nlp::NlpProblem good;
  good.n_vars = 2;
  good.objective.value = [](const VecXd& v) { return v.squaredNorm() + v[0] * v[1]; };
  good.objective.gradient = [](const VecXd& v) {
    VecXd g(2);
    g << 2.0 * v[0] + v[1], 2.0 * v[1] + v[0];
    return g;
  };
  CHECK(nlp::gradient_check(good, 50, 11, -2.0, 2.0) <= 1e-8);

  nlp::NlpProblem bad = good;
  bad.objective.gradient = [](const VecXd& v) { return VecXd(3.0 * v); };
  CHECK(nlp::gradient_check(bad, 50, 11, -2.0, 2.0) > 1e-2);
}
