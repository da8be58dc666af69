#pragma once

// Selection of the penalty weight lambda by maximizing the Laplace-approximated
// marginal loglikelihood. With H the (data-only) negative Hessian and P the
// penalty matrix, everything lambda-dependent reduces to the eigenvalues
// eta of -H^-1 P, so the score is a rational function of lambda:
//
//   score(lambda) = -1/2 { ||D w||^2 - ((n-r) + 2a - 2) / lambda + 2/b + sum_i tau_i / (1 + lambda tau_i) }
//
// with tau = -eta >= 0. lambda * score(lambda) is strictly decreasing, so the
// root is unique whenever it exists.

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>

#include "momentfit/errors.hpp"
#include "momentfit/penalty.hpp"

namespace momentfit {

struct HessianBundle {
  Eigen::MatrixXd H;    // -d2 l(w, theta) / d(w, theta)^2, jitter included
  Eigen::VectorXd eta;  // eigenvalues of -H^-1 P, ascending
  Eigen::VectorXd tau;  // -eta, negatives clipped to zero
  double jitter = 0.0;
  int clipped = 0;      // tau entries clipped from below
  bool projected = false;  // H was indefinite and replaced by its PSD part
};

/// Eigenvalues of -H^-1 P through the symmetric form -L^-1 P L^-T with H = L L'.
/// Throws SingularMatrixError when H is not positive definite.
inline Eigen::VectorXd penalty_eigenvalues(const Eigen::MatrixXd& h, const Eigen::MatrixXd& p) {
  if (h.rows() != h.cols() || h.rows() != p.rows() || p.rows() != p.cols())
    throw DomainError("penalty_eigenvalues: shape mismatch");
  Eigen::LLT<Eigen::MatrixXd> llt(h);
  if (llt.info() != Eigen::Success) throw SingularMatrixError("penalty_eigenvalues: H is not positive definite");
  const auto l = llt.matrixL();
  Eigen::MatrixXd tmp = l.solve(p);                                // L^-1 P
  Eigen::MatrixXd c = l.solve(tmp.transpose()).transpose();        // L^-1 P L^-T
  c = 0.5 * (c + c.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c, Eigen::EigenvaluesOnly);
  Eigen::VectorXd eta = -es.eigenvalues();
  std::sort(eta.begin(), eta.end());
  return eta;
}

/// tau = -eta with small negative values (indefinite H, roundoff) clipped to 0.
inline Eigen::VectorXd taus_from(const Eigen::VectorXd& eta, int* clipped = nullptr) {
  Eigen::VectorXd tau = -eta;
  int count = 0;
  for (auto& t : tau) {
    if (t < 0.0) {
      t = 0.0;
      ++count;
    }
  }
  if (clipped) *clipped = count;
  return tau;
}

/// Relative threshold below which an eigenvalue counts as zero.
inline double tau_threshold(const Eigen::VectorXd& tau) {
  const double top = tau.size() ? tau.cwiseAbs().maxCoeff() : 0.0;
  return 1e-8 * top;
}

/// Effective dimension sum_{tau_i > 0} 1 / (1 + lambda tau_i): the number of
/// penalized directions still determined by the data. Equals rank(P) at
/// lambda = 0 and decreases to 0.
inline double effective_dimension(const Eigen::VectorXd& eta, double lambda) {
  if (!(lambda >= 0.0)) throw DomainError("effective_dimension: lambda must be >= 0");
  const Eigen::VectorXd tau = taus_from(eta);
  const double thr = tau_threshold(tau);
  double sum = 0.0;
  for (double t : tau)
    if (t > thr) sum += 1.0 / (1.0 + lambda * t);
  return sum;
}

/// tr{(H + lambda P)^-1 P} = -sum eta_i / (1 - lambda eta_i) = sum tau_i / (1 + lambda tau_i).
inline double penalty_trace(const Eigen::VectorXd& eta, double lambda) {
  if (!(lambda >= 0.0)) throw DomainError("penalty_trace: lambda must be >= 0");
  double sum = 0.0;
  for (double e : eta) {
    const double denom = 1.0 - lambda * e;
    if (denom == 0.0) throw DomainError("penalty_trace: pole at this lambda");
    sum -= e / denom;
  }
  return sum;
}

namespace detail {

inline double inverse_scale(const PenaltyBundle& pen) {
  return std::isinf(pen.b_lambda) ? 0.0 : 1.0 / pen.b_lambda;
}

inline double score_numerator(const PenaltyBundle& pen) {
  return (pen.n - pen.order) + 2.0 * pen.a_lambda - 2.0;
}

}  // namespace detail

/// Derivative of the Laplace-approximated marginal loglikelihood in lambda.
inline double marginal_score(double lambda, double roughness, const PenaltyBundle& pen,
                             const Eigen::VectorXd& eta) {
  if (!(lambda > 0.0)) throw DomainError("marginal_score: lambda must be positive");
  return -0.5 * (roughness - detail::score_numerator(pen) / lambda + 2.0 * detail::inverse_scale(pen) +
                 penalty_trace(eta, lambda));
}

inline double marginal_score(double lambda, const Eigen::VectorXd& w, const PenaltyBundle& pen,
                             const HessianBundle& hess) {
  return marginal_score(lambda, pen.roughness(w), pen, hess.eta);
}

struct LambdaUpdate {
  double lambda = 1.0;
  int iterations = 0;
  bool clamped = false;  // no root inside [kLambdaMin, kLambdaMax]
};

inline constexpr double kLambdaMin = 1e-8;
inline constexpr double kLambdaMax = 1e12;

/// Root of the marginal score. Damped fixed-point iteration
/// lambda <- c / (||D w||^2 + 2/b + sum tau / (1 + lambda tau)), averaged
/// geometrically with the previous iterate, kept inside a shrinking bracket
/// on log lambda that falls back to bisection. The map can contract very
/// slowly, so a Newton step on the monotone form of the score is preferred
/// whenever it lands inside the bracket.
inline LambdaUpdate update_lambda(double roughness, const PenaltyBundle& pen,
                                  const Eigen::VectorXd& eta, double lambda_prev) {
  const double c = detail::score_numerator(pen);
  if (!(c > 0.0)) throw DomainError("update_lambda: (n-r) + 2a - 2 must be positive");
  const Eigen::VectorXd tau = taus_from(eta);
  const double inv_b2 = 2.0 * detail::inverse_scale(pen);
  // lambda * score * (-2): strictly increasing in lambda, root where it is zero.
  auto h = [&](double lambda) {
    double tr = 0.0;
    for (double t : tau) tr += lambda * t / (1.0 + lambda * t);
    return lambda * (roughness + inv_b2) + tr - c;
  };
  // d h / d log lambda
  auto h_slope = [&](double lambda) {
    double d = lambda * (roughness + inv_b2);
    for (double t : tau) {
      const double s = 1.0 + lambda * t;
      d += lambda * t / (s * s);
    }
    return d;
  };
  auto fixed_point = [&](double lambda) {
    double tr = 0.0;
    for (double t : tau) tr += t / (1.0 + lambda * t);
    return c / (roughness + inv_b2 + tr);
  };

  LambdaUpdate out;
  double lo = std::log(kLambdaMin);
  double hi = std::log(kLambdaMax);
  if (h(kLambdaMax) < 0.0) {
    out.lambda = kLambdaMax;
    out.clamped = true;
    return out;
  }
  if (h(kLambdaMin) > 0.0) {
    out.lambda = kLambdaMin;
    out.clamped = true;
    return out;
  }
  double u = std::log(std::clamp(std::isfinite(lambda_prev) && lambda_prev > 0.0 ? lambda_prev : 1.0,
                                 kLambdaMin, kLambdaMax));
  for (int it = 1; it <= 500; ++it) {
    out.iterations = it;
    const double lam = std::exp(u);
    const double hv = h(lam);
    if (hv == 0.0) break;
    if (hv < 0.0) lo = u; else hi = u;
    const double slope = h_slope(lam);
    double next = slope > 0.0 ? u - hv / slope : std::numeric_limits<double>::quiet_NaN();
    if (!(next > lo && next < hi)) next = 0.5 * (u + std::log(fixed_point(lam)));
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    const bool done = std::abs(next - u) < 1e-15 * std::max(1.0, std::abs(u)) || hi - lo < 1e-15;
    u = next;
    if (done) break;
  }
  out.lambda = std::exp(u);
  return out;
}

inline LambdaUpdate update_lambda(const Eigen::VectorXd& w, const PenaltyBundle& pen,
                                  const HessianBundle& hess, double lambda_prev) {
  return update_lambda(pen.roughness(w), pen, hess.eta, lambda_prev);
}

}  // namespace momentfit
