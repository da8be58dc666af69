#pragma once

// Erlang mixtures: sum_i w_i Gamma(i, theta) for integer shapes i = 1..n with a
// common scale. Distribution functions, quantiles, boxed moments
// E[X^k 1{a <= X < b}] and the model-implied (pi, mu, Sigma) triplet.

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "momentfit/errors.hpp"
#include "momentfit/incomplete_gamma.hpp"
#include "momentfit/summary_data.hpp"

namespace momentfit {

/// Weights over shapes 1..n (weights()[i] belongs to shape i+1) and scale theta.
class ErlangMixture {
 public:
  ErlangMixture(std::vector<double> weights, double scale)
      : weights_(std::move(weights)), scale_(scale) {
    if (weights_.empty()) throw DomainError("ErlangMixture: need at least one component");
    if (!(scale_ > 0.0) || !std::isfinite(scale_))
      throw DomainError("ErlangMixture: scale must be finite and positive");
    double sum = 0.0;
    for (double w : weights_) {
      if (!(w >= 0.0) || !std::isfinite(w)) throw DomainError("ErlangMixture: negative weight");
      sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-12) throw DomainError("ErlangMixture: weights must sum to 1");
  }

  /// Rescales nonnegative raw weights to a probability vector.
  static ErlangMixture normalized(std::vector<double> raw, double scale) {
    double sum = 0.0;
    for (double w : raw) {
      if (!(w >= 0.0) || !std::isfinite(w)) throw DomainError("ErlangMixture: negative weight");
      sum += w;
    }
    if (!(sum > 0.0)) throw DomainError("ErlangMixture: weights sum to zero");
    for (double& w : raw) w /= sum;
    // One more pass so the sum is 1 to the last ulp or two.
    double again = 0.0;
    for (double w : raw) again += w;
    for (double& w : raw) w /= again;
    return ErlangMixture(std::move(raw), scale);
  }

  int size() const noexcept { return static_cast<int>(weights_.size()); }
  double scale() const noexcept { return scale_; }
  const std::vector<double>& weights() const noexcept { return weights_; }

  friend bool operator==(const ErlangMixture&, const ErlangMixture&) = default;

 private:
  std::vector<double> weights_;
  double scale_;
};

/// theta^k Gamma(i+k)/Gamma(i), in log space once i + k exceeds 30.
inline double scaled_rising_factorial(int shape, int k, double theta) {
  if (k == 0) return 1.0;
  if (shape + k > 30)
    return std::exp(k * std::log(theta) + log_factorial(shape + k - 1) - log_factorial(shape - 1));
  double out = 1.0;
  for (int m = 0; m < k; ++m) out *= theta * (shape + m);
  return out;
}

/// Per-component boxed moments on a partition: `at(j, o)[i]` is
/// E[X^o 1{X in B_j}] for X ~ Gamma(i+1, theta), for o = 0..max_order[j].
/// Mixture moments are dot products with the weight vector.
class ComponentMoments {
 public:
  ComponentMoments(const BinPartition& partition, double theta, int n,
                   std::span<const int> max_order)
      : n_(n), theta_(theta) {
    if (n < 1) throw DomainError("ComponentMoments: n must be >= 1");
    if (!(theta > 0.0)) throw DomainError("ComponentMoments: theta must be positive");
    const std::size_t J = partition.size();
    if (max_order.size() != J) throw DomainError("ComponentMoments: order list length mismatch");
    const int top = *std::max_element(max_order.begin(), max_order.end());
    std::vector<ShapeLadder> ladders;
    ladders.reserve(J + 1);
    for (double edge : partition.edges()) ladders.emplace_back(edge / theta, n + std::max(top, 0));
    table_.resize(J);
    for (std::size_t j = 0; j < J; ++j) {
      table_[j].resize(static_cast<std::size_t>(max_order[j]) + 1);
      for (int o = 0; o <= max_order[j]; ++o) {
        Eigen::VectorXd col(n);
        for (int i = 1; i <= n; ++i)
          col[i - 1] = scaled_rising_factorial(i, o, theta) * ladder_mass(ladders[j], ladders[j + 1], i + o);
        table_[j][static_cast<std::size_t>(o)] = std::move(col);
      }
    }
  }

  const Eigen::VectorXd& at(std::size_t bin, int order) const {
    return table_.at(bin).at(static_cast<std::size_t>(order));
  }
  int max_order(std::size_t bin) const { return static_cast<int>(table_.at(bin).size()) - 1; }
  std::size_t bins() const noexcept { return table_.size(); }
  int components() const noexcept { return n_; }
  double theta() const noexcept { return theta_; }

 private:
  int n_;
  double theta_;
  std::vector<std::vector<Eigen::VectorXd>> table_;
};

namespace detail {

inline void check_raw(std::span<const double> w, double theta) {
  if (w.empty()) throw DomainError("mixture: no components");
  if (!(theta > 0.0)) throw DomainError("mixture: scale must be positive");
}

inline double raw_pdf(std::span<const double> w, double theta, double x) {
  check_raw(w, theta);
  if (!(x >= 0.0)) throw DomainError("pdf: x must be >= 0");
  if (std::isinf(x)) return 0.0;
  const double u = x / theta;
  if (u == 0.0) return w[0] / theta;
  const double log_u = std::log(u);
  double sum = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w[i] == 0.0) continue;
    sum += w[i] * std::exp(static_cast<double>(i) * log_u - u - log_factorial(static_cast<int>(i)));
  }
  return sum / theta;
}

inline double raw_cdf(std::span<const double> w, double theta, double x) {
  check_raw(w, theta);
  if (!(x >= 0.0)) throw DomainError("cdf: x must be >= 0");
  const ShapeLadder ladder(x / theta, static_cast<int>(w.size()));
  double sum = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) sum += w[i] * ladder.lower(static_cast<int>(i) + 1);
  return sum;
}

inline double raw_sf(std::span<const double> w, double theta, double x) {
  check_raw(w, theta);
  if (!(x >= 0.0)) throw DomainError("sf: x must be >= 0");
  const ShapeLadder ladder(x / theta, static_cast<int>(w.size()));
  double sum = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) sum += w[i] * ladder.upper(static_cast<int>(i) + 1);
  return sum;
}

inline double raw_boxed_moment(std::span<const double> w, double theta, double a, double b, int k) {
  check_raw(w, theta);
  if (k < 0) throw DomainError("boxed_moment: k must be >= 0");
  if (!(a >= 0.0) || !(a < b)) throw DomainError("boxed_moment: need 0 <= a < b");
  const int n = static_cast<int>(w.size());
  const ShapeLadder la(a / theta, n + k);
  const ShapeLadder lb(b / theta, n + k);
  double sum = 0.0;
  for (int i = 1; i <= n; ++i) {
    const double wi = w[static_cast<std::size_t>(i - 1)];
    if (wi == 0.0) continue;
    sum += wi * scaled_rising_factorial(i, k, theta) * ladder_mass(la, lb, i + k);
  }
  return sum;
}

/// Root of a nondecreasing function on a bracket [lo, hi] with f(lo) <= 0 <= f(hi).
/// Regula falsi (Illinois variant) interleaved with bisection.
inline double bracketed_root(const std::function<double(double)>& f, double lo, double hi,
                             double f_lo, double f_hi, double f_tol, int max_iter = 400) {
  bool last_side_lo = false;
  bool last_side_hi = false;
  for (int it = 0; it < max_iter; ++it) {
    double x;
    if (it % 3 == 2 || !(f_hi > f_lo)) {
      x = 0.5 * (lo + hi);
    } else {
      x = lo - f_lo * (hi - lo) / (f_hi - f_lo);
      if (!(x > lo && x < hi)) x = 0.5 * (lo + hi);
    }
    const double fx = f(x);
    if (std::abs(fx) <= f_tol) return x;
    if (fx < 0.0) {
      lo = x;
      f_lo = fx;
      if (last_side_lo) f_hi *= 0.5;
      last_side_lo = true;
      last_side_hi = false;
    } else {
      hi = x;
      f_hi = fx;
      if (last_side_hi) f_lo *= 0.5;
      last_side_hi = true;
      last_side_lo = false;
    }
    if (hi - lo <= 4.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(hi)))
      return 0.5 * (lo + hi);
  }
  return 0.5 * (lo + hi);
}

/// Quantile of a possibly unnormalized mixture; works on the survival side for
/// upper levels so tail quantiles keep their accuracy. Returns NaN when the
/// total mass never reaches p.
inline double raw_quantile(std::span<const double> w, double theta, double p, double tol = 1e-12) {
  check_raw(w, theta);
  if (!(p > 0.0) || !(p < 1.0)) throw DomainError("quantile: p must lie in (0, 1)");
  double total = 0.0;
  for (double wi : w) total += wi;
  if (!(total > p)) return std::numeric_limits<double>::quiet_NaN();
  const double n = static_cast<double>(w.size());
  const bool upper_side = p > 0.5;
  const double target_sf = total - p;
  auto g = [&](double x) {
    return upper_side ? target_sf - raw_sf(w, theta, x) : raw_cdf(w, theta, x) - p;
  };
  double lo = 0.0;
  double hi = theta * (n + 10.0 * std::sqrt(n) + 20.0 / (1.0 - p));
  double g_lo = g(lo);
  double g_hi = g(hi);
  for (int i = 0; g_hi < 0.0 && i < 200; ++i) {
    lo = hi;
    g_lo = g_hi;
    hi *= 2.0;
    g_hi = g(hi);
  }
  if (g_hi < 0.0) return std::numeric_limits<double>::quiet_NaN();
  if (g_lo >= 0.0) return lo;
  return bracketed_root(g, lo, hi, g_lo, g_hi, tol);
}

}  // namespace detail

inline double pdf(const ErlangMixture& mix, double x) {
  return detail::raw_pdf(mix.weights(), mix.scale(), x);
}

inline double cdf(const ErlangMixture& mix, double x) {
  return detail::raw_cdf(mix.weights(), mix.scale(), x);
}

/// Survival function 1 - cdf, computed without cancellation.
inline double sf(const ErlangMixture& mix, double x) {
  return detail::raw_sf(mix.weights(), mix.scale(), x);
}

inline double mean(const ErlangMixture& mix) {
  double m = 0.0;
  for (int i = 0; i < mix.size(); ++i) m += mix.weights()[static_cast<std::size_t>(i)] * (i + 1);
  return m * mix.scale();
}

/// E[X^k 1{a <= X < b}], b may be +infinity.
inline double boxed_moment(const ErlangMixture& mix, double a, double b, int k) {
  return detail::raw_boxed_moment(mix.weights(), mix.scale(), a, b, k);
}

inline double quantile(const ErlangMixture& mix, double p) {
  return detail::raw_quantile(mix.weights(), mix.scale(), p);
}

struct VarTvar {
  double var;
  double tvar;
};

inline VarTvar var_tvar(const ErlangMixture& mix, double level) {
  if (!(level > 0.0) || !(level < 1.0)) throw DomainError("var_tvar: level must lie in (0, 1)");
  const double v = quantile(mix, level);
  return {v, boxed_moment(mix, v, kInf, 1) / (1.0 - level)};
}

/// Model-implied local moments. `sigma` rows follow the flattened (bin, order)
/// index, bins ascending then orders 1..k_j ascending; bins with k_j = 0 own no rows.
struct MomentTriplet {
  std::vector<double> pi;
  std::vector<std::vector<double>> mu;
  Eigen::MatrixXd sigma;
};

/// Assembles (pi, mu, Sigma) from mixture moments up to order 2 k_j per bin.
/// `moments[j][o]` must hold E[X^o 1{X in B_j}] for o = 0..2 k_j.
inline MomentTriplet assemble_triplet(const std::vector<std::vector<double>>& moments,
                                      std::span<const int> k) {
  MomentTriplet out;
  const std::size_t J = k.size();
  std::size_t m = 0;
  for (std::size_t j = 0; j < J; ++j) m += static_cast<std::size_t>(k[j]);
  out.pi.resize(J);
  out.mu.resize(J);
  std::vector<double> flat;
  std::vector<std::size_t> bin_of;
  std::vector<int> order_of;
  for (std::size_t j = 0; j < J; ++j) {
    out.pi[j] = moments[j][0];
    for (int o = 1; o <= k[j]; ++o) {
      out.mu[j].push_back(moments[j][static_cast<std::size_t>(o)]);
      flat.push_back(moments[j][static_cast<std::size_t>(o)]);
      bin_of.push_back(j);
      order_of.push_back(o);
    }
  }
  out.sigma.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
  for (std::size_t a = 0; a < m; ++a) {
    for (std::size_t b = 0; b < m; ++b) {
      double v = -flat[a] * flat[b];
      if (bin_of[a] == bin_of[b])
        v += moments[bin_of[a]][static_cast<std::size_t>(order_of[a] + order_of[b])];
      out.sigma(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = v;
    }
  }
  return out;
}

inline MomentTriplet model_triplet(const ErlangMixture& mix, const BinPartition& partition,
                                   std::span<const int> k) {
  if (k.size() != partition.size()) throw DomainError("model_triplet: k length mismatch");
  std::vector<int> orders(k.size());
  for (std::size_t j = 0; j < k.size(); ++j) {
    if (k[j] < 0) throw DomainError("model_triplet: negative moment count");
    orders[j] = 2 * k[j];
  }
  const ComponentMoments table(partition, mix.scale(), mix.size(), orders);
  const Eigen::Map<const Eigen::VectorXd> w(mix.weights().data(), mix.size());
  std::vector<std::vector<double>> moments(k.size());
  for (std::size_t j = 0; j < k.size(); ++j)
    for (int o = 0; o <= orders[j]; ++o) moments[j].push_back(w.dot(table.at(j, o)));
  return assemble_triplet(moments, k);
}

/// Discretization w_i = F(i theta) - F((i-1) theta), i = 1..n, renormalized.
inline ErlangMixture tijms_weights(const std::function<double(double)>& target_cdf, double theta,
                                   int n) {
  if (!(theta > 0.0)) throw DomainError("tijms_weights: theta must be positive");
  if (n < 1) throw DomainError("tijms_weights: n must be >= 1");
  std::vector<double> w(static_cast<std::size_t>(n));
  double prev = target_cdf(0.0);
  double total = 0.0;
  for (int i = 1; i <= n; ++i) {
    const double cur = target_cdf(i * theta);
    w[static_cast<std::size_t>(i - 1)] = std::max(cur - prev, 0.0);
    total += w[static_cast<std::size_t>(i - 1)];
    prev = cur;
  }
  if (!(total > 0.0)) throw DomainError("tijms_weights: grid carries no probability mass");
  return ErlangMixture::normalized(std::move(w), theta);
}

}  // namespace momentfit
