#pragma once

// Roughness penalties for Erlang mixtures.
//
// The fitted penalty works on the weighted mode sequence w_j y_{j-1}, where
// y_i = i^i e^-i / i! is the peak height (up to 1/theta) of the Erlang density
// with shape i+1; D_r takes r-th differences of that sequence. The dense
// continuous matrix, for which w' Pc w = int f^(r)(x)^2 dx at theta = 1, is
// kept for comparisons.

#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "momentfit/errors.hpp"

namespace momentfit {

/// c_{r,0..r}: c_{0,0} = 1, c_{r,k} = c_{r-1,k} - c_{r-1,k-1}. Equals (-1)^k C(r, k).
inline std::vector<double> fd_coeffs(int r) {
  if (r < 0) throw DomainError("fd_coeffs: order must be >= 0");
  std::vector<double> c{1.0};
  for (int order = 1; order <= r; ++order) {
    std::vector<double> next(static_cast<std::size_t>(order) + 1, 0.0);
    for (int k = 0; k <= order; ++k) {
      const double keep = k < order ? c[static_cast<std::size_t>(k)] : 0.0;
      const double shift = k > 0 ? c[static_cast<std::size_t>(k - 1)] : 0.0;
      next[static_cast<std::size_t>(k)] = keep - shift;
    }
    c = std::move(next);
  }
  return c;
}

struct ModePoint {
  double x;
  double y;
};

/// (x_i, y_i) = (theta i, i^i e^-i / i!) for i = 0..n-1, with 0^0 = 1.
inline std::vector<ModePoint> mode_sequence(int n, double theta) {
  if (n < 1) throw DomainError("mode_sequence: n must be >= 1");
  std::vector<ModePoint> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    double y;
    if (i == 0) {
      y = 1.0;
    } else if (i > 20) {
      y = std::exp(i * std::log(static_cast<double>(i)) - i - std::lgamma(i + 1.0));
    } else {
      double fact = 1.0;
      for (int m = 2; m <= i; ++m) fact *= m;
      y = std::pow(static_cast<double>(i), i) * std::exp(-static_cast<double>(i)) / fact;
    }
    out.push_back({theta * i, y});
  }
  return out;
}

/// (n - r) x n matrix with D(k, l) = c_{r, l-k} y_l for 0 <= l - k <= r.
/// Column l holds the component with shape l + 1, paired with mode y_l.
inline Eigen::MatrixXd difference_matrix(int r, int n) {
  if (r < 1 || r >= n) throw DomainError("difference_matrix: need 1 <= r < n");
  const auto c = fd_coeffs(r);
  const auto modes = mode_sequence(n, 1.0);
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n - r, n);
  for (int k = 0; k < n - r; ++k)
    for (int off = 0; off <= r; ++off)
      d(k, k + off) = c[static_cast<std::size_t>(off)] * modes[static_cast<std::size_t>(k + off)].y;
  return d;
}

/// Dense continuous roughness matrix at unit scale:
/// sum_{k,l} c_k c_l Gamma(i+j-k-l-1) / (Gamma(i-k) Gamma(j-l)) 2^-(i+j-k-l-1), shapes i, j = 1..n.
/// Multiply by theta^-(2r+1) for scale theta.
inline Eigen::MatrixXd continuous_penalty_matrix(int r, int n) {
  if (r < 0) throw DomainError("continuous_penalty_matrix: r must be >= 0");
  if (n < 1) throw DomainError("continuous_penalty_matrix: n must be >= 1");
  const auto c = fd_coeffs(r);
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(n, n);
  for (int i = 1; i <= n; ++i) {
    for (int j = i; j <= n; ++j) {
      double sum = 0.0;
      for (int k = 0; k <= r; ++k) {
        if (i - k <= 0) continue;
        for (int l = 0; l <= r; ++l) {
          if (j - l <= 0) continue;
          const double s = i + j - k - l - 1;
          const double log_term = std::lgamma(s) - std::lgamma(i - k) - std::lgamma(j - l) - s * std::log(2.0);
          sum += c[static_cast<std::size_t>(k)] * c[static_cast<std::size_t>(l)] * std::exp(log_term);
        }
      }
      p(i - 1, j - 1) = sum;
      p(j - 1, i - 1) = sum;
    }
  }
  return p;
}

/// Difference penalty with its Gamma(a_lambda, b_lambda) hyperprior on lambda
/// (b_lambda is a scale; +infinity switches the linear prior term off).
struct PenaltyBundle {
  int order = 2;
  int n = 0;
  Eigen::MatrixXd D;
  Eigen::MatrixXd P;  // (n+1) x (n+1): [[D'D, 0], [0, 0]], last slot is theta
  double a_lambda = 1.0;
  double b_lambda = 1e5;
  std::vector<ModePoint> modes;

  int rank() const noexcept { return n - order; }

  double roughness(const Eigen::VectorXd& w) const { return (D * w).squaredNorm(); }
};

inline Eigen::MatrixXd penalty_matrix(const Eigen::MatrixXd& d) {
  const auto n = d.cols();
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(n + 1, n + 1);
  p.topLeftCorner(n, n) = d.transpose() * d;
  return p;
}

inline PenaltyBundle make_penalty(int r, int n, double a_lambda = 1.0, double b_lambda = 1e5,
                                  double theta = 1.0) {
  if (!(a_lambda > 0.0)) throw DomainError("make_penalty: a_lambda must be positive");
  if (!(b_lambda > 0.0)) throw DomainError("make_penalty: b_lambda must be positive");
  PenaltyBundle b;
  b.order = r;
  b.n = n;
  b.D = difference_matrix(r, n);
  b.P = penalty_matrix(b.D);
  b.a_lambda = a_lambda;
  b.b_lambda = b_lambda;
  b.modes = mode_sequence(n, theta);
  return b;
}

/// Prior part of the penalized objective:
/// 1/2 {-(n-r) log lambda + lambda ||D w||^2} + {lambda / b - (a-1) log lambda}.
inline double penalty_value(const PenaltyBundle& pen, const Eigen::VectorXd& w, double lambda) {
  if (!(lambda > 0.0)) throw DomainError("penalty_value: lambda must be positive");
  const double log_l = std::log(lambda);
  const double inv_b = std::isinf(pen.b_lambda) ? 0.0 : 1.0 / pen.b_lambda;
  return 0.5 * (-(pen.n - pen.order) * log_l + lambda * pen.roughness(w)) +
         (lambda * inv_b - (pen.a_lambda - 1.0) * log_l);
}

}  // namespace momentfit
