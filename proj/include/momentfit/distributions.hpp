#pragma once

// Reference distributions for the simulation studies. Every component lives
// on [0, inf): components with mass below zero are truncated there.

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <boost/math/distributions/beta.hpp>
#include <boost/math/distributions/gamma.hpp>
#include <boost/math/distributions/lognormal.hpp>
#include <boost/math/distributions/normal.hpp>

#include "momentfit/erlang_mixture.hpp"
#include "momentfit/errors.hpp"
#include "momentfit/metrics.hpp"

namespace momentfit {

using Rng = std::mt19937_64;

struct TruthComponent {
  double weight = 1.0;
  RealFunction cdf;
  RealFunction pdf;
  std::function<double(Rng&)> sample;
};

class TruthModel {
 public:
  TruthModel(std::string name, std::vector<TruthComponent> parts)
      : name_(std::move(name)), parts_(std::move(parts)) {
    double sum = 0.0;
    for (const auto& c : parts_) {
      if (!(c.weight > 0.0)) throw DomainError("TruthModel: component weights must be positive");
      sum += c.weight;
    }
    if (std::abs(sum - 1.0) > 1e-12) throw DomainError("TruthModel: component weights must sum to 1");
  }

  const std::string& name() const noexcept { return name_; }

  double cdf(double x) const {
    if (!(x > 0.0)) return 0.0;
    double s = 0.0;
    for (const auto& c : parts_) s += c.weight * c.cdf(x);
    return s;
  }

  double pdf(double x) const {
    if (!(x > 0.0)) return 0.0;
    double s = 0.0;
    for (const auto& c : parts_) s += c.weight * c.pdf(x);
    return s;
  }

  double quantile(double p) const {
    if (!(p > 0.0) || !(p < 1.0)) throw DomainError("quantile: p must lie in (0, 1)");
    auto g = [&](double x) { return cdf(x) - p; };
    double hi = 1.0;
    double g_hi = g(hi);
    double lo = 0.0;
    double g_lo = -p;
    for (int i = 0; g_hi < 0.0 && i < 1100; ++i) {
      lo = hi;
      g_lo = g_hi;
      hi *= 2.0;
      g_hi = g(hi);
    }
    return detail::bracketed_root(g, lo, hi, g_lo, g_hi, 1e-14, 2000);
  }

  double sample(Rng& rng) const {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double r = u(rng);
    for (std::size_t i = 0; i + 1 < parts_.size(); ++i) {
      if (r < parts_[i].weight) return parts_[i].sample(rng);
      r -= parts_[i].weight;
    }
    return parts_.back().sample(rng);
  }

  std::vector<double> sample(Rng& rng, std::size_t n) const {
    std::vector<double> out(n);
    for (auto& x : out) x = sample(rng);
    return out;
  }

  Distribution distribution() const {
    return {[self = *this](double x) { return self.cdf(x); }, [self = *this](double x) { return self.pdf(x); },
            [self = *this](double p) { return self.quantile(p); }};
  }

 private:
  std::string name_;
  std::vector<TruthComponent> parts_;
};

namespace truth {

inline TruthComponent lognormal(double weight, double mu, double sigma) {
  const boost::math::lognormal_distribution<double> d(mu, sigma);
  return {weight, [d](double x) { return boost::math::cdf(d, x); }, [d](double x) { return boost::math::pdf(d, x); },
          [mu, sigma](Rng& rng) { return std::lognormal_distribution<double>(mu, sigma)(rng); }};
}

inline TruthComponent gamma(double weight, double shape, double scale) {
  const boost::math::gamma_distribution<double> d(shape, scale);
  return {weight, [d](double x) { return boost::math::cdf(d, x); }, [d](double x) { return boost::math::pdf(d, x); },
          [shape, scale](Rng& rng) { return std::gamma_distribution<double>(shape, scale)(rng); }};
}

/// Normal(mean, sd) conditioned on X > 0; sampled by rejection.
inline TruthComponent truncated_normal(double weight, double mean, double sd) {
  const boost::math::normal_distribution<double> d(mean, sd);
  const double keep = boost::math::cdf(boost::math::complement(d, 0.0));
  const double below = boost::math::cdf(d, 0.0);
  return {weight, [d, keep, below](double x) { return (boost::math::cdf(d, x) - below) / keep; },
          [d, keep](double x) { return boost::math::pdf(d, x) / keep; },
          [mean, sd](Rng& rng) {
            std::normal_distribution<double> nd(mean, sd);
            for (;;) {
              const double x = nd(rng);
              if (x > 0.0) return x;
            }
          }};
}

/// m - G with G ~ Gamma(shape, scale), conditioned on being > 0.
inline TruthComponent reversed_gamma(double weight, double m, double shape, double scale) {
  const boost::math::gamma_distribution<double> d(shape, scale);
  const double keep = boost::math::cdf(d, m);  // P(G < m)
  return {weight,
          [d, m, keep](double x) {
            if (x >= m) return 1.0;
            // P(0 < m - G <= x) = P(m - x <= G < m)
            return (keep - boost::math::cdf(d, m - x)) / keep;
          },
          [d, m, keep](double x) { return x >= m ? 0.0 : boost::math::pdf(d, m - x) / keep; },
          [m, shape, scale](Rng& rng) {
            std::gamma_distribution<double> gd(shape, scale);
            for (;;) {
              const double x = m - gd(rng);
              if (x > 0.0) return x;
            }
          }};
}

/// Beta(a, b) sampled as a ratio of gamma draws.
inline TruthComponent beta(double weight, double a, double b) {
  const boost::math::beta_distribution<double> d(a, b);
  return {weight,
          [d](double x) { return x >= 1.0 ? 1.0 : boost::math::cdf(d, x); },
          [d](double x) { return x >= 1.0 ? 0.0 : boost::math::pdf(d, x); },
          [a, b](Rng& rng) {
            const double x = std::gamma_distribution<double>(a, 1.0)(rng);
            const double y = std::gamma_distribution<double>(b, 1.0)(rng);
            return x / (x + y);
          }};
}

}  // namespace truth

/// Reflection point of the reversed Gamma used when none is configured: the
/// least-squares value from calibrate_reflection_point (rms residual 2.6e-4).
inline constexpr double kDefaultReflectionPoint = 5.600102518;

inline TruthModel make_truth(const std::string& name, double reflection_point = kDefaultReflectionPoint) {
  if (name == "lognormal") return TruthModel(name, {truth::lognormal(1.0, 0.0, 0.5)});
  if (name == "mixgamma")
    return TruthModel(name, {truth::gamma(1.0 / 3.0, 30.0, 1.0), truth::gamma(2.0 / 3.0, 7.0, 1.0)});
  if (name == "gaussrevgamma")
    return TruthModel(name, {truth::truncated_normal(0.2, 1.0, 1.0 / 3.0),
                             truth::reversed_gamma(0.8, reflection_point, 11.0, 1.0 / 6.0)});
  if (name == "mixnormalbeta")
    return TruthModel(name, {truth::truncated_normal(0.2, 1.0, 1.0 / 3.0), truth::beta(0.8, 4.0, 8.0)});
  throw DomainError("unknown dataset: " + name);
}

}  // namespace momentfit
