#pragma once

// Penalized Erlang-mixture fit with automatic lambda:
//   repeat { maximize l(w, theta, lambda) over (w, theta) by BFGS;
//            H <- -d2 l(w, theta, 0); eta <- eig(-H^-1 P); lambda <- root of the score }
// until parameters, log lambda and the objective all settle.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "momentfit/bfgs.hpp"
#include "momentfit/erlang_mixture.hpp"
#include "momentfit/errors.hpp"
#include "momentfit/lambda_select.hpp"
#include "momentfit/likelihood.hpp"
#include "momentfit/penalty.hpp"
#include "momentfit/summary_data.hpp"

namespace momentfit {

struct FitOptions {
  int n = 50;
  int r = 2;
  double a_lambda = 1.0;
  double b_lambda = 1e5;
  int max_outer = 50;
  double tol_params = 1e-6;
  double tol_lambda = 1e-4;     // on |delta log lambda|
  double tol_objective = 1e-8;  // relative: |delta total| < tol (1 + |total|)
  std::optional<double> hessian_jitter;  // default 1e-8 * mean |diag H|
  std::uint64_t seed = 20240101;
  bool scale_by_n = true;
  int inner_restarts = 3;
  int inner_max_iterations = 2000;

  void validate() const {
    if (r < 1 || n <= r) throw DomainError("FitOptions: need n > r >= 1");
    if (!(a_lambda > 0.0) || !(b_lambda > 0.0)) throw DomainError("FitOptions: prior hyperparameters must be positive");
    if (max_outer < 1) throw DomainError("FitOptions: max_outer must be >= 1");
    if (!(tol_params > 0.0) || !(tol_lambda > 0.0) || !(tol_objective > 0.0))
      throw DomainError("FitOptions: tolerances must be positive");
    if (hessian_jitter && !(*hessian_jitter >= 0.0)) throw DomainError("FitOptions: hessian_jitter must be >= 0");
    if (inner_restarts < 0 || inner_max_iterations < 1) throw DomainError("FitOptions: bad inner solver settings");
    if ((n - r) + 2.0 * a_lambda - 2.0 <= 0.0)
      throw DomainError("FitOptions: (n-r) + 2 a_lambda - 2 must be positive");
  }
};

struct FitDiagnostics {
  int lambda_clamped = 0;       // update_lambda hit a clamp endpoint
  int hessian_projected = 0;    // H indefinite, replaced by its PSD part
  int tau_clipped = 0;          // negative tau clipped in the last Hessian
  double hessian_jitter = 0.0;  // jitter added to the last Hessian
  int inner_not_converged = 0;  // inner solves that ended above their gradient tolerance
  bool degenerate_information = false;  // one bin and no moments: penalty-only fit
};

struct OuterStep {
  std::optional<double> lambda;  // lambda of this inner solve (none on the first)
  double total_before = 0.0;
  double total_after = 0.0;
  int inner_iterations = 0;
};

struct FitResult {
  ErlangMixture mixture{{1.0}, 1.0};
  double lambda = 1.0;
  HessianBundle hessian;
  PenaltyBundle penalty;
  double effective_dim = 0.0;
  int outer_iters = 0;
  bool converged = false;
  std::vector<OuterStep> objective_trace;
  FitDiagnostics diagnostics;
  std::int64_t n_obs = 0;
  bool scale_by_n = true;
};

struct InnerResult {
  ErlangMixture mixture{{1.0}, 1.0};
  double total = 0.0;
  int iterations = 0;  // of the warm start
  bool converged = false;
  int best_start = 0;  // 0 = warm start, i > 0 = restart i
};

/// Central finite-difference Jacobian of a gradient, symmetrized.
template <class Gradient>
Eigen::MatrixXd fd_hessian(const Gradient& grad, const Eigen::VectorXd& x, const Eigen::VectorXd& steps) {
  const auto n = x.size();
  Eigen::MatrixXd h(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::VectorXd xp = x, xm = x;
    xp[i] += steps[i];
    xm[i] -= steps[i];
    h.col(i) = (grad(xp) - grad(xm)) / (2.0 * steps[i]);
  }
  return 0.5 * (h + h.transpose());
}

namespace detail {

inline std::mt19937_64 seeded_stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
  return std::mt19937_64(seq);
}

// BFGS can stall short of its gradient tolerance when one direction (the
// scale) is far stiffer than the rest: the remaining decrease is below the
// objective's rounding level, so line searches stop finding progress. A few
// Newton steps on the finite-difference Hessian of the analytic gradient,
// restricted to its positive eigenspace, finish the job.
inline void newton_polish(const GradientFunction& f, BfgsResult& r, double tol, int max_steps = 4) {
  const auto n = r.x.size();
  auto grad = [&](const Eigen::VectorXd& y) {
    Eigen::VectorXd g(n);
    if (!std::isfinite(f(y, g))) g.setConstant(std::numeric_limits<double>::quiet_NaN());
    return g;
  };
  for (int step = 0; step < max_steps; ++step) {
    const double gnorm = r.gradient.lpNorm<Eigen::Infinity>();
    if (gnorm <= tol) {
      r.status = BfgsStatus::GradientConverged;
      return;
    }
    const Eigen::VectorXd h = 1e-6 * (1.0 + r.x.array().abs());
    const Eigen::MatrixXd hess = fd_hessian(grad, r.x, h);
    if (!hess.allFinite()) return;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(hess);
    const double top = es.eigenvalues().maxCoeff();
    if (!(top > 0.0)) return;
    const Eigen::VectorXd c = es.eigenvectors().transpose() * r.gradient;
    Eigen::VectorXd dx = Eigen::VectorXd::Zero(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double ev = es.eigenvalues()[i];
      if (ev > 1e-10 * top) dx -= (c[i] / ev) * es.eigenvectors().col(i);
    }
    bool moved = false;
    for (double a : {1.0, 0.5, 0.25}) {
      Eigen::VectorXd g_new(n);
      const Eigen::VectorXd x_new = r.x + a * dx;
      const double v = f(x_new, g_new);
      ++r.evaluations;
      // accept steps that cut the gradient without raising the value beyond rounding
      if (std::isfinite(v) && g_new.allFinite() && g_new.lpNorm<Eigen::Infinity>() < gnorm &&
          v <= r.value + 1e-10 * (1.0 + std::abs(r.value))) {
        r.x = x_new;
        r.value = v;
        r.gradient = g_new;
        ++r.iterations;
        moved = true;
        break;
      }
    }
    if (!moved) return;
  }
  if (r.gradient.lpNorm<Eigen::Infinity>() <= tol) r.status = BfgsStatus::GradientConverged;
}

}  // namespace detail

/// Maximizes the objective over (w, theta) in squared coordinates, from `init`
/// and from `restarts` seeded perturbations of it; keeps the best total.
inline InnerResult inner_optimize(const PenalizedObjective& obj, std::optional<double> lambda,
                                  const ErlangMixture& init, const FitOptions& opt,
                                  std::uint64_t stream = 0) {
  const int n = obj.components();
  if (init.size() != n) throw DomainError("inner_optimize: init has the wrong size");
  GradientFunction f = [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    auto ev = obj.evaluate_unconstrained(x, lambda, true);
    if (!ev.finite) return std::numeric_limits<double>::infinity();
    g = -ev.gradient;
    return -ev.value.total;
  };

  const Eigen::VectorXd x0 = PenalizedObjective::to_unconstrained(init);
  auto rng = detail::seeded_stream(opt.seed, 0x5eed0000u + stream);
  std::normal_distribution<double> normal(0.0, 1.0);

  std::optional<BfgsResult> best;
  InnerResult out;
  for (int start = 0; start <= opt.inner_restarts; ++start) {
    Eigen::VectorXd x = x0;
    if (start > 0) {
      for (Eigen::Index i = 0; i < n; ++i) x[i] *= std::exp(0.3 * normal(rng));
      x[n] *= std::exp(0.1 * normal(rng));
    }
    Eigen::VectorXd g0(n + 1);
    const double f0 = f(x, g0);
    if (!std::isfinite(f0)) continue;
    BfgsOptions bo;
    bo.max_iterations = opt.inner_max_iterations;
    bo.gradient_tolerance = 1e-6 * (1.0 + std::abs(f0));
    BfgsResult r = minimize_bfgs(f, x, bo);
    if (!r.converged() && std::isfinite(r.value)) detail::newton_polish(f, r, bo.gradient_tolerance);
    if (start == 0) {
      out.iterations = r.iterations;
      out.converged = r.converged();
    }
    if (!best || r.value < best->value) {
      best = std::move(r);
      out.best_start = start;
    }
  }
  if (!best || !std::isfinite(best->value))
    throw FitError("inner_optimize: objective is not finite at any start");
  std::vector<double> w;
  double theta = 0.0;
  PenalizedObjective::from_unconstrained(best->x, w, theta);
  out.mixture = ErlangMixture::normalized(std::move(w), theta);
  out.total = -best->value;
  return out;
}

/// Negative Hessian of the data loglikelihood (lambda = 0) in (w, theta), by
/// central differences of the analytic gradient, plus jitter; then the
/// penalty eigenvalues. An H that stays indefinite under escalating jitter is
/// replaced by its positive part.
inline HessianBundle hessian_at(const PenalizedObjective& obj, const ErlangMixture& mix,
                                const FitOptions& opt) {
  const int n = mix.size();
  Eigen::VectorXd x(n + 1);
  for (int i = 0; i < n; ++i) x[i] = mix.weights()[static_cast<std::size_t>(i)];
  x[n] = mix.scale();
  auto grad = [&](const Eigen::VectorXd& p) -> Eigen::VectorXd {
    std::vector<double> w(p.data(), p.data() + n);
    auto ev = obj.evaluate(w, p[n], std::nullopt, true);
    if (!ev.finite) throw FitError("hessian_at: objective not finite near the iterate");
    return ev.gradient;
  };
  Eigen::VectorXd steps(n + 1);
  const double w_step = 1e-6 / std::max(1.0, static_cast<double>(n) / 10.0);
  for (int i = 0; i < n; ++i) steps[i] = w_step;
  steps[n] = 1e-6 * mix.scale();

  HessianBundle hb;
  Eigen::MatrixXd h = -fd_hessian(grad, x, steps);
  const double mean_diag = std::max(h.diagonal().cwiseAbs().mean(), 1e-300);
  double eps = opt.hessian_jitter.value_or(1e-8 * mean_diag);
  const Eigen::MatrixXd& p = obj.penalty().P;
  for (int attempt = 0; attempt < 4; ++attempt) {
    Eigen::MatrixXd hj = h;
    hj.diagonal().array() += eps;
    Eigen::LLT<Eigen::MatrixXd> llt(hj);
    if (llt.info() == Eigen::Success) {
      hb.H = std::move(hj);
      hb.jitter = eps;
      hb.eta = penalty_eigenvalues(hb.H, p);
      hb.tau = taus_from(hb.eta, &hb.clipped);
      return hb;
    }
    eps = std::max(eps * 100.0, 1e-12 * mean_diag);
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(h);
  const double floor = opt.hessian_jitter.value_or(1e-8 * mean_diag);
  Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).array() + floor;
  hb.H = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
  hb.H = 0.5 * (hb.H + hb.H.transpose());
  hb.jitter = floor;
  hb.projected = true;
  hb.eta = penalty_eigenvalues(hb.H, p);
  hb.tau = taus_from(hb.eta, &hb.clipped);
  return hb;
}

/// Starting point: theta = (largest finite edge) / n so the component modes
/// span the observed range, uniform weights with seeded +-10% jitter.
inline ErlangMixture initial_mixture(const LocalMomentSummary& summary, const FitOptions& opt) {
  double span = summary.partition().last_finite_edge();
  if (!(span > 0.0)) {
    span = 0.0;
    if (!summary.mu_hat().empty() && !summary.mu_hat()[0].empty()) span = 2.0 * summary.mu_hat()[0][0];
    if (!(span > 0.0)) span = static_cast<double>(opt.n);
  }
  const double theta = span / opt.n;
  auto rng = detail::seeded_stream(opt.seed, 0x1417u);
  std::uniform_real_distribution<double> jitter(-0.1, 0.1);
  std::vector<double> w(static_cast<std::size_t>(opt.n));
  for (auto& wi : w) wi = 1.0 + jitter(rng);
  return ErlangMixture::normalized(std::move(w), theta);
}

inline FitResult fit(const LocalMomentSummary& summary, const FitOptions& opt = {}) {
  opt.validate();
  FitResult res;
  res.n_obs = summary.n_obs();
  res.scale_by_n = opt.scale_by_n;
  res.penalty = make_penalty(opt.r, opt.n, opt.a_lambda, opt.b_lambda);
  const PenalizedObjective obj(summary, res.penalty, opt.scale_by_n);
  res.diagnostics.degenerate_information = summary.bins() == 1 && summary.total_moments() == 0;

  ErlangMixture current = initial_mixture(summary, opt);
  std::optional<double> lambda;
  double lambda_guess = 1.0;
  double prev_total = 0.0;

  for (int outer = 0; outer < opt.max_outer; ++outer) {
    OuterStep step;
    step.lambda = lambda;
    const auto before = obj.evaluate(current.weights(), current.scale(), lambda, false);
    step.total_before = before.finite ? before.value.total : kMinusInf;

    InnerResult inner = inner_optimize(obj, lambda, current, opt, static_cast<std::uint64_t>(outer));
    step.total_after = inner.total;
    step.inner_iterations = inner.iterations;
    if (!inner.converged) ++res.diagnostics.inner_not_converged;
    res.objective_trace.push_back(step);

    HessianBundle hess = hessian_at(obj, inner.mixture, opt);
    if (hess.projected) ++res.diagnostics.hessian_projected;
    const Eigen::VectorXd w = Eigen::Map<const Eigen::VectorXd>(inner.mixture.weights().data(), opt.n);
    const LambdaUpdate upd = update_lambda(w, res.penalty, hess, lambda.value_or(lambda_guess));
    if (upd.clamped) ++res.diagnostics.lambda_clamped;

    double dparams = std::abs(inner.mixture.scale() - current.scale());
    for (int i = 0; i < opt.n; ++i)
      dparams = std::max(dparams, std::abs(inner.mixture.weights()[static_cast<std::size_t>(i)] -
                                           current.weights()[static_cast<std::size_t>(i)]));
    const bool converged = outer > 0 && lambda && dparams < opt.tol_params &&
                           std::abs(std::log(upd.lambda) - std::log(*lambda)) < opt.tol_lambda &&
                           std::abs(inner.total - prev_total) < opt.tol_objective * (1.0 + std::abs(inner.total));

    res.mixture = inner.mixture;
    res.lambda = lambda.value_or(upd.lambda);
    res.hessian = std::move(hess);
    res.outer_iters = outer + 1;
    res.diagnostics.tau_clipped = res.hessian.clipped;
    res.diagnostics.hessian_jitter = res.hessian.jitter;
    current = inner.mixture;
    prev_total = inner.total;
    lambda = upd.lambda;
    if (converged) {
      res.converged = true;
      break;
    }
  }
  res.effective_dim = effective_dimension(res.hessian.eta, res.lambda);
  return res;
}

}  // namespace momentfit
