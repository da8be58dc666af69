#pragma once

// Dense BFGS minimizer with a strong-Wolfe line search (bracketing + zoom with
// safeguarded cubic interpolation). Non-finite trial values are treated as
// +infinity and simply shrink the step.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

#include <Eigen/Dense>

namespace momentfit {

/// Returns f(x) and writes the gradient into `grad`. Non-finite f marks an
/// infeasible point.
using GradientFunction = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd& grad)>;

struct BfgsOptions {
  int max_iterations = 1000;
  double gradient_tolerance = 1e-6;  // on ||g||_inf
  double relative_tolerance = 1e-13;  // stop after a few steps with tiny relative decrease
  double wolfe_c1 = 1e-4;
  double wolfe_c2 = 0.9;
};

enum class BfgsStatus { GradientConverged, StalledDecrease, LineSearchFailed, MaxIterations, NonFiniteStart };

struct BfgsResult {
  Eigen::VectorXd x;
  double value = std::numeric_limits<double>::infinity();
  Eigen::VectorXd gradient;
  int iterations = 0;
  int evaluations = 0;
  BfgsStatus status = BfgsStatus::MaxIterations;

  bool converged() const {
    return status == BfgsStatus::GradientConverged || status == BfgsStatus::StalledDecrease;
  }
};

namespace detail {

// Minimizer of the cubic through (a, fa, ga) and (b, fb, gb), clamped to the
// interior of [min(a, b), max(a, b)].
inline double cubic_step(double a, double fa, double ga, double b, double fb, double gb) {
  const double d1 = ga + gb - 3.0 * (fa - fb) / (a - b);
  const double disc = d1 * d1 - ga * gb;
  const double lo = std::min(a, b);
  const double hi = std::max(a, b);
  double t = 0.5 * (a + b);
  if (disc >= 0.0) {
    const double d2 = std::copysign(std::sqrt(disc), b - a);
    const double cand = b - (b - a) * (gb + d2 - d1) / (gb - ga + 2.0 * d2);
    if (std::isfinite(cand)) t = cand;
  }
  const double margin = 0.1 * (hi - lo);
  return std::clamp(t, lo + margin, hi - margin);
}

}  // namespace detail

inline BfgsResult minimize_bfgs(const GradientFunction& f, Eigen::VectorXd x0,
                                const BfgsOptions& opt = {}) {
  BfgsResult res;
  const auto n = x0.size();
  Eigen::VectorXd g(n);
  double fx = f(x0, g);
  res.evaluations = 1;
  res.x = x0;
  res.value = fx;
  res.gradient = g;
  if (!std::isfinite(fx) || !g.allFinite()) {
    res.status = BfgsStatus::NonFiniteStart;
    return res;
  }
  Eigen::VectorXd x = std::move(x0);
  Eigen::MatrixXd hinv = Eigen::MatrixXd::Identity(n, n);
  bool scaled = false;
  int stall = 0;

  Eigen::VectorXd x_new(n), g_new(n);
  for (int it = 0; it < opt.max_iterations; ++it) {
    if (g.lpNorm<Eigen::Infinity>() <= opt.gradient_tolerance) {
      res.status = BfgsStatus::GradientConverged;
      break;
    }
    Eigen::VectorXd p = -hinv * g;
    double slope = g.dot(p);
    if (!(slope < 0.0)) {
      hinv.setIdentity();
      p = -g;
      slope = -g.squaredNorm();
    }
    if (!scaled) {
      // First step: cap the move at unit length in the sup norm.
      const double pmax = p.lpNorm<Eigen::Infinity>();
      if (pmax > 1.0) {
        p /= pmax;
        slope /= pmax;
      }
    }

    // Strong-Wolfe line search on phi(a) = f(x + a p).
    auto phi = [&](double a, Eigen::VectorXd& grad_out, double& dphi) {
      x_new = x + a * p;
      const double v = f(x_new, grad_out);
      ++res.evaluations;
      if (!std::isfinite(v) || !grad_out.allFinite()) {
        dphi = std::numeric_limits<double>::quiet_NaN();
        return std::numeric_limits<double>::infinity();
      }
      dphi = grad_out.dot(p);
      return v;
    };

    double a_prev = 0.0, f_prev = fx, d_prev = slope;
    double a = 1.0;
    double accepted = -1.0;
    double f_acc = fx;
    Eigen::VectorXd g_acc(n), x_acc(n);
    auto zoom = [&](double lo, double f_lo, double d_lo, double hi, double f_hi, double d_hi) {
      for (int z = 0; z < 40; ++z) {
        double t;
        if (std::isfinite(f_hi) && std::isfinite(d_hi))
          t = detail::cubic_step(lo, f_lo, d_lo, hi, f_hi, d_hi);
        else
          t = lo + 0.25 * (hi - lo);
        double dt;
        const double ft = phi(t, g_new, dt);
        if (!std::isfinite(ft) || ft > fx + opt.wolfe_c1 * t * slope || ft >= f_lo) {
          hi = t;
          f_hi = ft;
          d_hi = dt;
        } else {
          if (std::abs(dt) <= -opt.wolfe_c2 * slope) {
            accepted = t; f_acc = ft; g_acc = g_new; x_acc = x_new;
            return;
          }
          if (dt * (hi - lo) >= 0.0) {
            hi = lo;
            f_hi = f_lo;
            d_hi = d_lo;
          }
          lo = t;
          f_lo = ft;
          d_lo = dt;
          // Keep the best sufficient-decrease point as a fallback.
          if (ft < f_acc) { accepted = t; f_acc = ft; g_acc = g_new; x_acc = x_new; }
        }
        if (std::abs(hi - lo) < 1e-16 * std::max(1.0, std::abs(lo))) return;
      }
    };
    for (int ls = 0; ls < 60; ++ls) {
      double da;
      const double fa = phi(a, g_new, da);
      if (!std::isfinite(fa) || fa > fx + opt.wolfe_c1 * a * slope || (ls > 0 && fa >= f_prev)) {
        zoom(a_prev, f_prev, d_prev, a, fa, da);
        break;
      }
      if (std::abs(da) <= -opt.wolfe_c2 * slope) {
        accepted = a; f_acc = fa; g_acc = g_new; x_acc = x_new;
        break;
      }
      if (da >= 0.0) {
        zoom(a, fa, da, a_prev, f_prev, d_prev);
        if (accepted < 0.0) { accepted = a; f_acc = fa; g_acc = g_new; x_acc = x + a * p; phi(a, g_acc, da); }
        break;
      }
      a_prev = a; f_prev = fa; d_prev = da;
      a *= 2.0;
    }
    if (accepted < 0.0 || !(f_acc < fx)) {
      if (!hinv.isIdentity()) {
        hinv.setIdentity();
        continue;
      }
      res.status = BfgsStatus::LineSearchFailed;
      break;
    }

    const Eigen::VectorXd s = x_acc - x;
    const Eigen::VectorXd y = g_acc - g;
    const double decrease = fx - f_acc;
    x = x_acc;
    g = g_acc;
    const double f_old = fx;
    fx = f_acc;
    res.iterations = it + 1;

    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (!scaled) {
        hinv *= sy / y.squaredNorm();
        scaled = true;
      }
      const double rho = 1.0 / sy;
      const Eigen::VectorXd hy = hinv * y;
      const double yhy = y.dot(hy);
      hinv += (rho * rho * yhy + rho) * (s * s.transpose()) - rho * (hy * s.transpose() + s * hy.transpose());
    }

    if (decrease <= opt.relative_tolerance * std::max(1.0, std::abs(f_old))) {
      if (++stall >= 5) {
        res.status = BfgsStatus::StalledDecrease;
        break;
      }
    } else {
      stall = 0;
    }
    if (it + 1 == opt.max_iterations) res.status = BfgsStatus::MaxIterations;
  }
  res.x = x;
  res.value = fx;
  res.gradient = g;
  return res;
}

}  // namespace momentfit
