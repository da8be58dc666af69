#pragma once

// Distances between a fitted and a reference distribution (quantile and
// distribution-function L2, quantile L1, Kullback-Leibler) and the one-sample
// Kolmogorov-Smirnov test.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <queue>
#include <span>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "momentfit/erlang_mixture.hpp"
#include "momentfit/errors.hpp"

namespace momentfit {

using RealFunction = std::function<double(double)>;

/// A distribution on [0, inf) seen through its cdf, pdf and quantile function.
struct Distribution {
  RealFunction cdf;
  RealFunction pdf;
  RealFunction quantile;
};

inline Distribution as_distribution(const ErlangMixture& mix) {
  return {[mix](double x) { return cdf(mix, x); }, [mix](double x) { return pdf(mix, x); },
          [mix](double p) { return quantile(mix, p); }};
}

inline constexpr double kQuantileCut = 1e-6;

namespace detail {

// Globally adaptive Gauss-Kronrod over consecutive break points: keep
// splitting the piece with the largest error estimate until the summed
// estimate is below abs_tol or the interval budget runs out.
inline double integrate(const RealFunction& f, std::span<const double> breaks, double abs_tol = 1e-9,
                        int max_intervals = 300) {
  using GK = boost::math::quadrature::gauss_kronrod<double, 31>;
  struct Piece {
    double a, b, value, error;
    bool operator<(const Piece& o) const { return error < o.error; }
  };
  auto eval = [&](double lo, double hi) {
    double err = 0.0;
    const double v = GK::integrate(f, lo, hi, 0, 0.0, &err);
    return Piece{lo, hi, v, err};
  };
  std::priority_queue<Piece> heap;
  double total_err = 0.0;
  for (std::size_t i = 0; i + 1 < breaks.size(); ++i) {
    if (!(breaks[i + 1] > breaks[i])) continue;
    const Piece p = eval(breaks[i], breaks[i + 1]);
    total_err += p.error;
    heap.push(p);
  }
  while (!heap.empty() && total_err > abs_tol && static_cast<int>(heap.size()) < max_intervals) {
    const Piece p = heap.top();
    const double mid = 0.5 * (p.a + p.b);
    if (!(mid > p.a && mid < p.b)) break;
    heap.pop();
    const Piece l = eval(p.a, mid);
    const Piece r = eval(mid, p.b);
    total_err += l.error + r.error - p.error;
    heap.push(l);
    heap.push(r);
  }
  double sum = 0.0;
  for (; !heap.empty(); heap.pop()) sum += heap.top().value;
  return sum;
}

inline double integrate(const RealFunction& f, double a, double b, double abs_tol = 1e-9,
                        int max_intervals = 300) {
  if (std::isinf(b)) {
    // x = a + t / (1 - t) on [0, 1)
    RealFunction g = [&](double t) {
      if (t >= 1.0) return 0.0;
      const double u = 1.0 - t;
      return f(a + t / u) / (u * u);
    };
    const double br[] = {0.0, 0.5, 0.9, 0.99, 1.0};
    return integrate(g, br, abs_tol, max_intervals);
  }
  const double br[] = {a, b};
  return integrate(f, br, abs_tol, max_intervals);
}

// Break points that make quantile integrands piecewise tame: the integrand
// steepens near both ends of (0, 1).
inline std::vector<double> probability_breaks(double cut) {
  std::vector<double> br{cut};
  for (double p : {1e-4, 1e-2, 0.1, 0.5, 0.9, 0.99, 0.999, 0.9999, 0.99999})
    if (p > cut && p < 1.0 - cut) br.push_back(p);
  br.push_back(1.0 - cut);
  return br;
}

inline double quantile_integral(const RealFunction& q1, const RealFunction& q2, double power, double cut) {
  auto g = [&](double p) {
    const double a = q1(p);
    const double b = q2(p);
    if (!std::isfinite(a) || !std::isfinite(b)) throw DomainError("quantile distance: non-finite quantile");
    return std::pow(std::abs(a - b), power);
  };
  return integrate(g, probability_breaks(cut));
}

}  // namespace detail

/// int_cut^{1-cut} (q1 - q2)^2 dp with cut = 1e-6: the open-ended tails are
/// truncated because heavy-tailed quantile functions need not be square integrable.
inline double l2_quantile(const RealFunction& q1, const RealFunction& q2, double cut = kQuantileCut) {
  return detail::quantile_integral(q1, q2, 2.0, cut);
}

/// int_cut^{1-cut} |q1 - q2| dp.
inline double l1_quantile(const RealFunction& q1, const RealFunction& q2, double cut = kQuantileCut) {
  return detail::quantile_integral(q1, q2, 1.0, cut);
}

/// int_0^inf (F1 - F2)^2 dx: quadrature on [0, x_max] plus the tail beyond.
inline double l2_cdf(const RealFunction& f1, const RealFunction& f2, double x_max) {
  if (!(x_max > 0.0) || !std::isfinite(x_max)) throw DomainError("l2_cdf: x_max must be finite and positive");
  auto g = [&](double x) {
    const double d = f1(x) - f2(x);
    return d * d;
  };
  std::vector<double> br;
  constexpr int pieces = 16;
  for (int i = 0; i <= pieces; ++i) br.push_back(x_max * i / pieces);
  return detail::integrate(g, br) + detail::integrate(g, x_max, std::numeric_limits<double>::infinity());
}

/// x_max = larger of the two 1 - 1e-8 quantiles.
inline double l2_cdf(const Distribution& a, const Distribution& b) {
  const double x_max = std::max(a.quantile(1.0 - 1e-8), b.quantile(1.0 - 1e-8));
  return l2_cdf(a.cdf, b.cdf, x_max);
}

struct KlResult {
  double value = 0.0;
  bool infinite = false;  // f2 vanished where f1 carries mass
};

/// int_lo^hi f1 log(f1 / f2); integrand 0 where f1 < 1e-300.
inline KlResult kl_divergence(const RealFunction& f1, const RealFunction& f2, std::span<const double> breaks) {
  if (breaks.size() < 2) throw DomainError("kl_divergence: need an interval");
  KlResult out;
  auto g = [&](double x) {
    const double a = f1(x);
    if (!(a >= 1e-300)) return 0.0;
    const double b = f2(x);
    if (!(b > 0.0)) {
      out.infinite = true;
      return 0.0;
    }
    return a * (std::log(a) - std::log(b));
  };
  const double sum = detail::integrate(g, breaks);
  out.value = out.infinite ? std::numeric_limits<double>::infinity() : std::max(sum, 0.0);
  return out;
}

/// KL(a || b) over a's 1e-9 .. 1 - 1e-9 quantile range.
inline KlResult kl_divergence(const Distribution& a, const Distribution& b) {
  std::vector<double> br;
  for (double p : {1e-9, 1e-6, 1e-3, 0.05, 0.25, 0.5, 0.75, 0.95, 0.999, 1 - 1e-6, 1 - 1e-9}) {
    const double x = a.quantile(p);
    if (br.empty() || x > br.back()) br.push_back(x);
  }
  return kl_divergence(a.pdf, b.pdf, br);
}

/// P(K > lambda) for the Kolmogorov distribution.
inline double kolmogorov_sf(double lambda) {
  if (!(lambda > 0.0)) return 1.0;
  if (lambda < 1.18) {
    // Theta-function form of the cdf; converges quickly for small lambda.
    const double c = -M_PI * M_PI / (8.0 * lambda * lambda);
    double sum = 0.0;
    for (int k = 1; k < 100; ++k) {
      const double t = std::exp(c * (2 * k - 1) * (2 * k - 1));
      sum += t;
      if (t < 1e-16 * sum) break;
    }
    return std::clamp(1.0 - std::sqrt(2.0 * M_PI) / lambda * sum, 0.0, 1.0);
  }
  double sum = 0.0;
  for (int k = 1; k < 200; ++k) {
    const double t = std::exp(-2.0 * k * k * lambda * lambda);
    sum += (k % 2 == 1 ? 2.0 : -2.0) * t;
    if (t < 1e-12) break;
  }
  return std::clamp(sum, 0.0, 1.0);
}

struct KsResult {
  double stat = 0.0;
  double pvalue = 1.0;
};

/// Two-sided one-sample KS of a sorted sample against F, asymptotic p-value.
inline KsResult ks_test(std::span<const double> sorted, const RealFunction& f) {
  if (sorted.empty()) throw DomainError("ks_test: empty sample");
  if (!std::is_sorted(sorted.begin(), sorted.end())) throw DomainError("ks_test: sample must be sorted");
  const double n = static_cast<double>(sorted.size());
  double d = 0.0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    const double fx = f(sorted[i]);
    d = std::max({d, (i + 1) / n - fx, fx - i / n});
  }
  return {d, kolmogorov_sf(std::sqrt(n) * d)};
}

struct DistanceReport {
  double l2_quantile = 0.0;
  double l2_cdf = 0.0;
  double l1_quantile = 0.0;
  double kl = 0.0;
  bool kl_infinite = false;
  std::optional<double> ks_stat;
  std::optional<double> ks_pvalue;
  double quantile_cut = kQuantileCut;  // quantile integrals run over (cut, 1 - cut)
};

/// Distances of `fit` from `truth`; KL is KL(truth || fit); KS only when a
/// sorted raw sample is given.
inline DistanceReport distance_report(const Distribution& truth, const Distribution& fit,
                                      std::span<const double> sorted_sample = {}) {
  DistanceReport r;
  r.l2_quantile = l2_quantile(truth.quantile, fit.quantile);
  r.l1_quantile = l1_quantile(truth.quantile, fit.quantile);
  r.l2_cdf = l2_cdf(truth, fit);
  const auto kl = kl_divergence(truth, fit);
  r.kl = kl.value;
  r.kl_infinite = kl.infinite;
  if (!sorted_sample.empty()) {
    const auto ks = ks_test(sorted_sample, fit.cdf);
    r.ks_stat = ks.stat;
    r.ks_pvalue = ks.pvalue;
  }
  return r;
}

}  // namespace momentfit
