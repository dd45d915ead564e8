#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <vector>

#include "rompc/errors.hpp"

namespace rompc::core {

// ============================================================================
// Class-K gain functions
// ============================================================================
// A Gain is a monotone class-K function r >= 0 -> sum_i c_i * r^{p_i} with
// c_i >= 0, p_i > 0.  This family covers every gain the quadratic-certificate
// machinery produces and is closed under addition, positive scaling, and the
// compositions the algorithms perform.  Compositions that leave the family
// degrade to a lazily evaluated function object; such gains still evaluate
// and stay monotone, but symbolic operations (inverse, majorants) reject them.

class Gain {
 public:
  struct Term {
    double coeff;     // c >= 0
    double exponent;  // p > 0
  };

  Gain() = default;  // the zero gain

  explicit Gain(std::vector<Term> terms) : terms_(std::move(terms)) {
    for (const auto& t : terms_) {
      if (t.coeff < 0.0) throw std::invalid_argument("Gain: coefficient must be >= 0");
      if (t.exponent <= 0.0) throw std::invalid_argument("Gain: exponent must be > 0");
    }
    prune();
  }

  Gain(double coeff, double exponent) : Gain(std::vector<Term>{{coeff, exponent}}) {}

  static Gain zero() { return Gain(); }
  static Gain identity() { return Gain(1.0, 1.0); }
  static Gain linear(double c) { return Gain(c, 1.0); }
  static Gain quadratic(double c) { return Gain(c, 2.0); }

  // Wraps an arbitrary monotone function with value(0) = 0.  Used as the
  // fallback for compositions outside the power-law family.
  static Gain lazy(std::function<double(double)> fn) {
    Gain g;
    g.lazy_ = std::move(fn);
    return g;
  }

  double value(double r) const {
    if (r < 0.0) throw std::invalid_argument("Gain: argument must be >= 0");
    if (lazy_) return lazy_(r);
    double v = 0.0;
    for (const auto& t : terms_) v += t.coeff * std::pow(r, t.exponent);
    return v;
  }

  double operator()(double r) const { return value(r); }

  // d value / d r.  Sub-linear terms diverge at r = 0; callers clamp the
  // argument away from zero where that can happen.
  double derivative(double r) const {
    if (r < 0.0) throw std::invalid_argument("Gain: argument must be >= 0");
    if (lazy_) {
      const double h = 1e-7 * (1.0 + r);
      const double lo = std::max(0.0, r - h);
      return (lazy_(r + h) - lazy_(lo)) / (r + h - lo);
    }
    double v = 0.0;
    for (const auto& t : terms_) {
      if (t.exponent == 1.0)
        v += t.coeff;
      else if (r == 0.0 && t.exponent < 1.0)
        v += std::numeric_limits<double>::infinity();
      else
        v += t.coeff * t.exponent * std::pow(r, t.exponent - 1.0);
    }
    return v;
  }

  bool is_zero() const { return !lazy_ && terms_.empty(); }
  bool is_closed_form() const { return !lazy_; }
  bool is_single_term() const { return !lazy_ && terms_.size() == 1; }

  const std::vector<Term>& terms() const {
    require_closed_form("terms()");
    return terms_;
  }

  // All exponents >= 1 implies superadditivity: value(a+b) >= value(a)+value(b).
  bool is_superadditive() const {
    require_closed_form("is_superadditive()");
    for (const auto& t : terms_)
      if (t.exponent < 1.0) return false;
    return true;
  }

  // Inverse of a single-term gain: (r/c)^(1/p).
  Gain inverse() const {
    require_closed_form("inverse()");
    if (terms_.empty())
      throw UnsupportedCertificateError("Gain: cannot invert the zero gain");
    if (terms_.size() != 1)
      throw UnsupportedCertificateError(
          "Gain: inverse supported for single-term power laws only");
    const double c = terms_[0].coeff;
    const double p = terms_[0].exponent;
    if (c <= 0.0) throw UnsupportedCertificateError("Gain: cannot invert zero coefficient");
    return Gain(std::pow(1.0 / c, 1.0 / p), 1.0 / p);
  }

  // Pointwise sum.
  Gain operator+(const Gain& rhs) const {
    if (lazy_ || rhs.lazy_) {
      auto a = *this, b = rhs;
      return lazy([a, b](double r) { return a.value(r) + b.value(r); });
    }
    std::vector<Term> out = terms_;
    out.insert(out.end(), rhs.terms_.begin(), rhs.terms_.end());
    return Gain(std::move(out));
  }

  // Output scaling a * g(r), a >= 0.
  Gain scale_output(double a) const {
    if (a < 0.0) throw std::invalid_argument("Gain: scale must be >= 0");
    if (lazy_) {
      auto self = *this;
      return lazy([self, a](double r) { return a * self.value(r); });
    }
    std::vector<Term> out = terms_;
    for (auto& t : out) t.coeff *= a;
    return Gain(std::move(out));
  }

  // Input scaling g(a * r), a >= 0.
  Gain scale_input(double a) const {
    if (a < 0.0) throw std::invalid_argument("Gain: scale must be >= 0");
    if (lazy_) {
      auto self = *this;
      return lazy([self, a](double r) { return self.value(a * r); });
    }
    std::vector<Term> out = terms_;
    for (auto& t : out) t.coeff *= std::pow(a, t.exponent);
    return Gain(std::move(out));
  }

  // Composition this(inner(r)).  Closed form when the inner gain is a single
  // power law; otherwise a lazy gain.
  Gain compose(const Gain& inner) const {
    if (is_zero() || inner.is_zero()) return zero();
    if (!lazy_ && inner.is_single_term()) {
      const double a = inner.terms_[0].coeff;
      const double q = inner.terms_[0].exponent;
      std::vector<Term> out;
      out.reserve(terms_.size());
      for (const auto& t : terms_)
        out.push_back({t.coeff * std::pow(a, t.exponent), t.exponent * q});
      return Gain(std::move(out));
    }
    auto outer = *this, in = inner;
    return lazy([outer, in](double r) { return outer.value(in.value(r)); });
  }

  // Majorant m with value(r1 + r2) <= value(r1) + m(r2) for r1, r2 in [0, c].
  // Per term: convex terms (p >= 1) take the slope at the right end of the
  // range, sub-linear terms are subadditive already.
  Gain shift_majorant(double c) const {
    require_closed_form("shift_majorant()");
    if (c < 0.0) throw std::invalid_argument("Gain: range bound must be >= 0");
    Gain out;
    for (const auto& t : terms_) {
      if (t.exponent == 1.0 || t.exponent < 1.0) {
        // Linear terms shift exactly; sub-linear terms are subadditive.
        out = out + Gain(std::vector<Term>{t});
      } else {
        Gain single(std::vector<Term>{t});
        out = out + lazy([single, c](double r) {
                return single.value(c + r) - single.value(c);
              });
      }
    }
    return out;
  }

 private:
  void require_closed_form(const char* op) const {
    if (lazy_)
      throw UnsupportedCertificateError(std::string("Gain: ") + op +
                                        " requires a closed-form power-law gain");
  }

  void prune() {
    std::erase_if(terms_, [](const Term& t) { return t.coeff == 0.0; });
  }

  std::vector<Term> terms_;
  std::function<double(double)> lazy_;
};

// Spec-facing evaluation helper.
inline double gain_eval(const Gain& g, double r) { return g.value(r); }

}  // namespace rompc::core
