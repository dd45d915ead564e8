#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "rompc/core/model.hpp"

namespace rompc::core {

// Deterministic random draws.  The mt19937_64 engine is fully specified by
// the standard; the distribution transforms are hand-rolled because the
// std:: distributions are implementation-defined and would break byte-exact
// reproducibility of traces.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  double uniform01() {
    // 53-bit mantissa draw in [0, 1).
    return (eng_() >> 11) * (1.0 / 9007199254740992.0);
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  double normal() {
    // Box-Muller; caches the second deviate.
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform01();
    while (u1 <= 1e-300) u1 = uniform01();
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  VecXd normal_vec(int n) {
    VecXd v(n);
    for (int i = 0; i < n; ++i) v[i] = normal();
    return v;
  }

  // Uniform on the sphere of the given radius.
  VecXd sphere(int n, double radius) {
    VecXd v = normal_vec(n);
    double nv = v.norm();
    while (nv <= 1e-300) {
      v = normal_vec(n);
      nv = v.norm();
    }
    return v * (radius / nv);
  }

  // Uniform in the ball of the given radius.
  VecXd ball(int n, double radius) {
    const VecXd dir = sphere(n, 1.0);
    const double r = radius * std::pow(uniform01(), 1.0 / n);
    return dir * r;
  }

 private:
  std::mt19937_64 eng_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace rompc::core
