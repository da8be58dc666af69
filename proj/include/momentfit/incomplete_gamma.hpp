#pragma once

// Regularized incomplete gamma functions.
//
// `reg_lower_inc_gamma(x, a)` is P(a, x) = Gamma(a)^-1 int_0^x t^(a-1) e^-t dt.
// For integer shapes the `ShapeLadder` evaluates P and Q = 1 - P for every
// shape 1..s_max at a fixed x in O(s_max) using Poisson-sum recurrences, each
// side accumulated from positive terms so that neither suffers cancellation.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "momentfit/errors.hpp"

namespace momentfit {

/// log(m!) for integer m >= 0, tabulated up to 2048.
inline double log_factorial(int m) {
  static const std::vector<double> table = [] {
    std::vector<double> t(2049);
    t[0] = 0.0;
    for (std::size_t i = 1; i < t.size(); ++i) t[i] = std::lgamma(static_cast<double>(i) + 1.0);
    return t;
  }();
  if (m < 0) throw DomainError("log_factorial: negative argument");
  if (static_cast<std::size_t>(m) < table.size()) return table[static_cast<std::size_t>(m)];
  return std::lgamma(m + 1.0);
}

struct IncompleteGamma {
  double lower;  // P(a, x)
  double upper;  // Q(a, x)
};

namespace detail {

inline constexpr int kIncGammaMaxIter = 100000;
inline constexpr double kIncGammaEps = 1e-16;

// Series for P, valid and fast for x < a + 1.
inline double inc_gamma_series(double x, double a) {
  double term = 1.0 / a;
  double sum = term;
  double ap = a;
  for (int n = 0; n < kIncGammaMaxIter; ++n) {
    ap += 1.0;
    term *= x / ap;
    sum += term;
    if (std::abs(term) < std::abs(sum) * kIncGammaEps) break;
  }
  return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Modified Lentz continued fraction for Q, used for x >= a + 1.
inline double inc_gamma_cfrac(double x, double a) {
  constexpr double tiny = std::numeric_limits<double>::min() / kIncGammaEps;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i < kIncGammaMaxIter; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < kIncGammaEps) break;
  }
  return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

}  // namespace detail

/// Both tails of the regularized incomplete gamma function, each computed
/// directly on its accurate side.
inline IncompleteGamma inc_gamma(double x, double alpha) {
  if (!(alpha > 0.0) || std::isinf(alpha)) throw DomainError("inc_gamma: shape must be positive");
  if (!(x >= 0.0)) throw DomainError("inc_gamma: x must be >= 0");
  if (x == 0.0) return {0.0, 1.0};
  if (std::isinf(x)) return {1.0, 0.0};
  if (x < alpha + 1.0) {
    const double p = detail::inc_gamma_series(x, alpha);
    return {p, 1.0 - p};
  }
  const double q = detail::inc_gamma_cfrac(x, alpha);
  return {1.0 - q, q};
}

inline double reg_lower_inc_gamma(double x, double alpha) { return inc_gamma(x, alpha).lower; }
inline double reg_upper_inc_gamma(double x, double alpha) { return inc_gamma(x, alpha).upper; }

/// P(x, s) and Q(x, s) for integer shapes s = 1..max_shape at one point x.
///
/// Q(x, s) = sum_{m < s} p_m and P(x, s) = sum_{m >= s} p_m with p_m the
/// Poisson(x) mass. Q is built upward from s = 1; where P is small (s beyond
/// the Poisson median) it is built downward from a tail seed. This is the
/// shape recurrence P(x, s+1) = P(x, s) - p_s arranged to avoid subtraction.
class ShapeLadder {
 public:
  ShapeLadder() = default;

  ShapeLadder(double x, int max_shape) : lower_(max_shape + 1), upper_(max_shape + 1) {
    if (max_shape < 1) throw DomainError("ShapeLadder: max_shape must be >= 1");
    if (!(x >= 0.0)) throw DomainError("ShapeLadder: x must be >= 0");
    if (x == 0.0) {
      std::fill(lower_.begin(), lower_.end(), 0.0);
      std::fill(upper_.begin(), upper_.end(), 1.0);
      return;
    }
    if (std::isinf(x)) {
      std::fill(lower_.begin(), lower_.end(), 1.0);
      std::fill(upper_.begin(), upper_.end(), 0.0);
      return;
    }
    const double log_x = std::log(x);
    // Poisson masses p_m by the ratio recurrence while e^-x is representable.
    const bool recur = x < 700.0;
    auto pmf = [&](int m, double prev) {
      return recur ? (m == 0 ? std::exp(-x) : prev * x / m)
                   : std::exp(-x + m * log_x - log_factorial(m));
    };
    // Upward: Q(x, s) for all s, and the first s where Q crosses 1/2.
    int split = max_shape + 1;
    double q = 0.0;
    double term = 0.0;
    for (int s = 1; s <= max_shape; ++s) {
      term = pmf(s - 1, term);
      q += term;
      upper_[s] = q;
      if (split > max_shape && q >= 0.5) split = s;
    }
    for (int s = 1; s < split; ++s) lower_[s] = 1.0 - upper_[s];
    if (split <= max_shape) {
      // Downward: P(x, s) = P(x, s+1) + p_s, seeded from the series at max_shape.
      double p = inc_gamma(x, static_cast<double>(max_shape)).lower;
      lower_[max_shape] = p;
      for (int s = max_shape - 1; s >= split; --s) {
        p += std::exp(-x + s * log_x - log_factorial(s));
        lower_[s] = p;
      }
    }
  }

  double lower(int shape) const { return lower_.at(static_cast<std::size_t>(shape)); }
  double upper(int shape) const { return upper_.at(static_cast<std::size_t>(shape)); }
  int max_shape() const noexcept { return static_cast<int>(lower_.size()) - 1; }

 private:
  std::vector<double> lower_;
  std::vector<double> upper_;
};

/// Mass of a Gamma(shape, 1) on [a, b) given ladders at a and b, taking the
/// difference on whichever tail is smaller.
inline double ladder_mass(const ShapeLadder& at_a, const ShapeLadder& at_b, int shape) {
  const double pb = at_b.lower(shape);
  const double d = pb <= 0.5 ? pb - at_a.lower(shape) : at_a.upper(shape) - at_b.upper(shape);
  return d > 0.0 ? d : 0.0;
}

}  // namespace momentfit
