#pragma once

// Delta-method bands: var f = n_scale * grad' (H + lambda P)^-1 grad with the
// gradient of f over (w, theta) taken by central differences on raw weights.

#include <algorithm>
#include <cmath>
#include <functional>
#include <ostream>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "momentfit/csv.hpp"
#include "momentfit/erlang_mixture.hpp"
#include "momentfit/errors.hpp"
#include "momentfit/fitter.hpp"

namespace momentfit {

struct DeltaVariance {
  double variance = 0.0;
  bool clipped = false;  // negative quadratic form (roundoff) clipped to 0
};

/// n_scale grad' (H + lambda P)^-1 grad; n_scale = 1 when the objective already
/// carries N (scale_by_n), 1/N otherwise.
inline DeltaVariance delta_variance(const Eigen::VectorXd& grad, const Eigen::MatrixXd& h,
                                    const Eigen::MatrixXd& p, double lambda, std::int64_t n_obs,
                                    bool scale_by_n) {
  if (grad.size() != h.rows() || h.rows() != h.cols() || p.rows() != h.rows() || p.cols() != h.cols())
    throw DomainError("delta_variance: dimension mismatch");
  if (!(lambda >= 0.0)) throw DomainError("delta_variance: lambda must be >= 0");
  if (n_obs <= 0) throw DomainError("delta_variance: n_obs must be positive");
  DeltaVariance out;
  if (grad.isZero(0.0)) return out;
  const Eigen::MatrixXd a = h + lambda * p;
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() != Eigen::Success) throw SingularMatrixError("delta_variance: H + lambda P is not positive definite");
  const double n_scale = scale_by_n ? 1.0 : 1.0 / static_cast<double>(n_obs);
  double v = n_scale * grad.dot(llt.solve(grad));
  if (v < 0.0) {
    v = 0.0;
    out.clipped = true;
  }
  out.variance = v;
  return out;
}

inline DeltaVariance delta_variance(const Eigen::VectorXd& grad, const FitResult& fit) {
  return delta_variance(grad, fit.hessian.H, fit.penalty.P, fit.lambda, fit.n_obs, fit.scale_by_n);
}

/// Standard normal quantile: rational approximation refined by one Halley step.
inline double normal_quantile(double p) {
  if (!(p > 0.0) || !(p < 1.0)) throw DomainError("normal_quantile: p must lie in (0, 1)");
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                 1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                 6.680131188771972e+01,  -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                 -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                 3.754408661907416e+00};
  constexpr double p_low = 0.02425;
  double x;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  // Phi(x) - p, from the upper tail when x > 0 so 1 - p (exact there) carries the digits
  const double e = x > 0.0 ? (1.0 - p) - 0.5 * std::erfc(x / std::sqrt(2.0)) : 0.5 * std::erfc(-x / std::sqrt(2.0)) - p;
  const double u = e * std::sqrt(2.0 * M_PI) * std::exp(0.5 * x * x);
  return x - u / (1.0 + 0.5 * x * u);
}

struct ConfidenceBand {
  std::vector<double> grid;
  std::vector<double> center;
  std::vector<double> lower;
  std::vector<double> upper;
  double level = 0.95;
};

/// f(raw weights, theta) for a functional of the mixture.
using MixtureFunctional = std::function<double(std::span<const double>, double)>;

/// Central differences of f over (w_1..w_n, theta), w steps absolute, theta
/// step relative. Returns an empty vector if any evaluation is not finite.
inline Eigen::VectorXd functional_gradient(const MixtureFunctional& f, const ErlangMixture& mix,
                                           double rel_step = 1e-6) {
  const int n = mix.size();
  std::vector<double> w = mix.weights();
  Eigen::VectorXd g(n + 1);
  for (int i = 0; i < n; ++i) {
    const double h = rel_step;
    const double w0 = w[static_cast<std::size_t>(i)];
    w[static_cast<std::size_t>(i)] = w0 + h;
    const double fp = f(w, mix.scale());
    w[static_cast<std::size_t>(i)] = w0 - h;
    const double fm = f(w, mix.scale());
    w[static_cast<std::size_t>(i)] = w0;
    if (!std::isfinite(fp) || !std::isfinite(fm)) return {};
    g[i] = (fp - fm) / (2.0 * h);
  }
  const double ht = rel_step * mix.scale();
  const double fp = f(w, mix.scale() + ht);
  const double fm = f(w, mix.scale() - ht);
  if (!std::isfinite(fp) || !std::isfinite(fm)) return {};
  g[n] = (fp - fm) / (2.0 * ht);
  return g;
}

/// Exact gradient of the quantile at level p by implicit differentiation of
/// sum_i w_i F_i(q / theta) = p: dq/dw_i = -F_i(q) / f(q), dq/dtheta = q / theta.
inline Eigen::VectorXd quantile_gradient_implicit(const ErlangMixture& mix, double q) {
  const int n = mix.size();
  Eigen::VectorXd g(n + 1);
  const double dens = pdf(mix, q);
  if (!(dens > 0.0)) throw DomainError("quantile gradient: zero density at the quantile");
  const ShapeLadder ladder(q / mix.scale(), n);
  for (int i = 0; i < n; ++i) g[i] = -ladder.lower(i + 1) / dens;
  g[n] = q / mix.scale();
  return g;
}

namespace detail {

inline double z_for(double level) {
  if (!(level >= 0.0) || !(level < 1.0)) throw DomainError("band: level must lie in [0, 1)");
  return level == 0.0 ? 0.0 : normal_quantile(0.5 * (1.0 + level));
}

inline void push_band(ConfidenceBand& band, double x, double center, double variance, double z,
                      bool floor_zero) {
  const double half = z * std::sqrt(variance);
  band.grid.push_back(x);
  band.center.push_back(center);
  double lo = center - half;
  if (floor_zero) lo = std::max(lo, 0.0);
  band.lower.push_back(std::min(lo, center));
  band.upper.push_back(center + half);
}

}  // namespace detail

inline ConfidenceBand density_band(const FitResult& fit, std::span<const double> grid, double level) {
  const double z = detail::z_for(level);
  ConfidenceBand band;
  band.level = level;
  for (double x : grid) {
    MixtureFunctional f = [x](std::span<const double> w, double theta) { return detail::raw_pdf(w, theta, x); };
    const double c = pdf(fit.mixture, x);
    const Eigen::VectorXd g = functional_gradient(f, fit.mixture);
    if (g.size() == 0) throw DomainError("density_band: density not finite near the fit");
    detail::push_band(band, x, c, delta_variance(g, fit).variance, z, true);
  }
  return band;
}

inline ConfidenceBand quantile_band(const FitResult& fit, std::span<const double> probs, double level) {
  const double z = detail::z_for(level);
  ConfidenceBand band;
  band.level = level;
  for (double p : probs) {
    const double q = quantile(fit.mixture, p);
    MixtureFunctional f = [p](std::span<const double> w, double theta) { return detail::raw_quantile(w, theta, p); };
    Eigen::VectorXd g = functional_gradient(f, fit.mixture);
    if (g.size() == 0) g = quantile_gradient_implicit(fit.mixture, q);
    detail::push_band(band, p, q, delta_variance(g, fit).variance, z, false);
  }
  return band;
}

inline ConfidenceBand tvar_band(const FitResult& fit, std::span<const double> levels, double level) {
  const double z = detail::z_for(level);
  ConfidenceBand band;
  band.level = level;
  for (double a : levels) {
    const double t = var_tvar(fit.mixture, a).tvar;
    MixtureFunctional f = [a](std::span<const double> w, double theta) {
      const double v = detail::raw_quantile(w, theta, a);
      if (!std::isfinite(v)) return v;
      return detail::raw_boxed_moment(w, theta, v, kInf, 1) / (1.0 - a);
    };
    const Eigen::VectorXd g = functional_gradient(f, fit.mixture);
    if (g.size() == 0) throw DomainError("tvar_band: TVaR not finite near the fit");
    detail::push_band(band, a, t, delta_variance(g, fit).variance, z, false);
  }
  return band;
}

inline void write_band_csv(std::ostream& os, const ConfidenceBand& band) {
  CsvWriter csv(os);
  csv.header({"grid", "center", "lower", "upper"});
  for (std::size_t i = 0; i < band.grid.size(); ++i)
    csv.cell(band.grid[i]).cell(band.center[i]).cell(band.lower[i]).cell(band.upper[i]).end_row();
}

}  // namespace momentfit
