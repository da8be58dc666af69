#pragma once

// Composite loglikelihood of local moments: a multinomial term for the bin
// proportions plus a Gaussian approximation for the scaled moments,
//
//   l = c pi_hat' log pi - 1/2 log|S| - 1/2 (mu - mu_hat)' S^-1 (mu - mu_hat),
//
// with S = Sigma / c. In the default mode c = N (pi_hat N ~ Multinomial, and
// mu_hat ~ Normal(mu, Sigma / N)); in the verbatim mode c = 1.
//
// The penalized objective subtracts the difference penalty and its Gamma
// hyperprior. Gradients are analytic: pi, mu and Sigma are linear in the
// weights, and d/dtheta of a component's boxed moment of order o is
// (M_{o+1} - i theta M_o) / theta^2.

#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "momentfit/erlang_mixture.hpp"
#include "momentfit/errors.hpp"
#include "momentfit/penalty.hpp"
#include "momentfit/summary_data.hpp"

namespace momentfit {

inline constexpr double kMinusInf = -std::numeric_limits<double>::infinity();

/// Pieces of the data loglikelihood. value() = multinomial - (log_det + mahalanobis) / 2.
struct DataLoglik {
  double multinomial = 0.0;
  double log_det = 0.0;
  double mahalanobis = 0.0;
  double jitter = 0.0;  // diagonal jitter that made S factorizable

  double gaussian() const { return -0.5 * (log_det + mahalanobis); }
  double value() const { return multinomial + gaussian(); }
};

struct ObjectiveValue {
  double loglik = 0.0;
  double penalty = 0.0;
  double total = 0.0;
  double multinomial_part = 0.0;
  double gaussian_part = 0.0;
};

namespace detail {

using WideMatrix = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
using WideVector = Eigen::Matrix<long double, Eigen::Dynamic, 1>;

/// LLT of `s`, adding jitter 1e-10, 1e-8, 1e-6 times the mean diagonal if needed.
template <class Matrix>
std::optional<Eigen::LLT<Matrix>> jittered_llt(const Matrix& s, double* used_jitter = nullptr) {
  Eigen::LLT<Matrix> llt(s);
  if (llt.info() == Eigen::Success && s.allFinite()) {
    if (used_jitter) *used_jitter = 0.0;
    return llt;
  }
  if (!s.allFinite()) return std::nullopt;
  const auto mean_diag = s.diagonal().cwiseAbs().mean();
  for (double f : {1e-10, 1e-8, 1e-6}) {
    Matrix t = s;
    t.diagonal().array() += f * mean_diag;
    llt.compute(t);
    if (llt.info() == Eigen::Success) {
      if (used_jitter) *used_jitter = static_cast<double>(f * mean_diag);
      return llt;
    }
  }
  return std::nullopt;
}

inline double multinomial_term(std::span<const double> pi, std::span<const double> pi_hat) {
  double sum = 0.0;
  for (std::size_t j = 0; j < pi.size(); ++j) {
    if (pi_hat[j] == 0.0) continue;
    if (!(pi[j] > 0.0)) return kMinusInf;
    sum += pi_hat[j] * std::log(pi[j]);
  }
  return sum;
}

}  // namespace detail

/// Data loglikelihood on flat arrays: `mu`, `mu_hat` follow the Sigma row order.
/// Returns nullopt when S stays singular after jitter; multinomial = -inf when
/// some observed bin has zero model probability.
inline std::optional<DataLoglik> data_loglik_parts(std::span<const double> pi,
                                                   std::span<const double> mu,
                                                   const Eigen::MatrixXd& sigma,
                                                   std::span<const double> pi_hat,
                                                   std::span<const double> mu_hat,
                                                   std::int64_t n_obs, bool scale_by_n) {
  const double c = scale_by_n ? static_cast<double>(n_obs) : 1.0;
  DataLoglik out;
  out.multinomial = c * detail::multinomial_term(pi, pi_hat);
  const auto m = static_cast<Eigen::Index>(mu.size());
  if (m == 0) return out;
  const detail::WideMatrix s = sigma.cast<long double>() / static_cast<long double>(c);
  auto llt = detail::jittered_llt(s, &out.jitter);
  if (!llt) return std::nullopt;
  const detail::WideMatrix l = llt->matrixL();
  out.log_det = static_cast<double>(2.0L * l.diagonal().array().log().sum());
  detail::WideVector d(m);
  for (Eigen::Index a = 0; a < m; ++a)
    d[a] = static_cast<long double>(mu[static_cast<std::size_t>(a)]) - mu_hat[static_cast<std::size_t>(a)];
  out.mahalanobis = static_cast<double>(llt->matrixL().solve(d).squaredNorm());
  return out;
}

inline std::vector<double> flatten(const std::vector<std::vector<double>>& rows) {
  std::vector<double> out;
  for (const auto& r : rows) out.insert(out.end(), r.begin(), r.end());
  return out;
}

/// Data loglikelihood of a model triplet. Throws SingularMatrixError if the
/// covariance cannot be factorized; returns -inf for an impossible observed bin.
inline double data_loglik(const MomentTriplet& triplet, const LocalMomentSummary& summary,
                          bool scale_by_n = true) {
  const auto mu = flatten(triplet.mu);
  const auto mu_hat = flatten(summary.mu_hat());
  if (triplet.pi.size() != summary.bins() || mu.size() != mu_hat.size())
    throw DomainError("data_loglik: triplet does not match the summary layout");
  auto parts = data_loglik_parts(triplet.pi, mu, triplet.sigma, summary.pi_hat(), mu_hat,
                                 summary.n_obs(), scale_by_n);
  if (!parts) throw SingularMatrixError("data_loglik: moment covariance is singular");
  if (std::isinf(parts->multinomial)) return kMinusInf;
  return parts->value();
}

/// Penalized objective l(w, theta, lambda) and its gradient for one summary.
class PenalizedObjective {
 public:
  struct Evaluation {
    ObjectiveValue value;
    Eigen::VectorXd gradient;  // d total / d(w_1..w_n, theta); empty if not requested
    double jitter = 0.0;
    bool finite = false;
    bool singular = false;  // moment covariance not factorizable
  };

  PenalizedObjective(const LocalMomentSummary& summary, PenaltyBundle penalty, bool scale_by_n)
      : summary_(summary), penalty_(std::move(penalty)), scale_by_n_(scale_by_n) {
    k_ = summary_.k();
    mu_hat_ = flatten(summary_.mu_hat());
    grad_orders_.resize(k_.size());
    for (std::size_t j = 0; j < k_.size(); ++j) grad_orders_[j] = 2 * k_[j] + 1;
  }

  const LocalMomentSummary& summary() const noexcept { return summary_; }
  const PenaltyBundle& penalty() const noexcept { return penalty_; }
  bool scale_by_n() const noexcept { return scale_by_n_; }
  int components() const noexcept { return penalty_.n; }

  /// Evaluates at raw (not necessarily normalized) weights. Without lambda the
  /// whole prior part is dropped and the result is the data term alone.
  Evaluation evaluate(std::span<const double> w, double theta, std::optional<double> lambda,
                      bool with_gradient) const {
    Evaluation ev;
    const int n = penalty_.n;
    if (static_cast<int>(w.size()) != n) throw DomainError("objective: weight count mismatch");
    if (!(theta > 0.0) || !std::isfinite(theta)) return ev;
    const std::size_t J = k_.size();
    const ComponentMoments table(summary_.partition(), theta, n, grad_orders_);
    const Eigen::Map<const Eigen::VectorXd> wv(w.data(), n);

    std::vector<std::vector<long double>> wide(J);
    std::vector<std::vector<double>> moments(J);
    for (std::size_t j = 0; j < J; ++j)
      for (int o = 0; o <= grad_orders_[j]; ++o) {
        const Eigen::VectorXd& col = table.at(j, o);
        long double acc = 0.0L;
        for (int i = 0; i < n; ++i) acc += static_cast<long double>(wv[i]) * col[i];
        wide[j].push_back(acc);
        moments[j].push_back(static_cast<double>(acc));
      }
    const MomentTriplet trip = assemble_triplet(moments, k_);
    const auto mu = flatten(trip.mu);

    const double c = scale_by_n_ ? static_cast<double>(summary_.n_obs()) : 1.0;
    DataLoglik data;
    data.multinomial = c * detail::multinomial_term(trip.pi, summary_.pi_hat());
    if (!std::isfinite(data.multinomial)) return ev;

    const auto m = static_cast<Eigen::Index>(mu.size());
    Eigen::VectorXd alpha;
    Eigen::MatrixXd g_mat;
    if (m > 0) {
      // S = Sigma / c is badly conditioned and its entries come from a
      // cancelling difference; assembling and factorizing it in extended
      // precision keeps the objective smooth at finite-difference scales.
      const detail::WideMatrix s = wide_covariance(wide, c);
      auto llt = detail::jittered_llt(s, &ev.jitter);
      if (!llt) {
        ev.singular = true;
        return ev;
      }
      data.jitter = ev.jitter;
      const detail::WideMatrix l = llt->matrixL();
      data.log_det = static_cast<double>(2.0L * l.diagonal().array().log().sum());
      detail::WideVector d(m);
      Eigen::Index a = 0;
      for (std::size_t j = 0; j < J; ++j)
        for (int o = 1; o <= k_[j]; ++o, ++a)
          d[a] = wide[j][static_cast<std::size_t>(o)] - mu_hat_[static_cast<std::size_t>(a)];
      const detail::WideVector alpha_w = llt->solve(d);
      data.mahalanobis = static_cast<double>(d.dot(alpha_w));
      alpha = alpha_w.cast<double>();
      if (with_gradient) {
        const detail::WideMatrix inv = llt->solve(detail::WideMatrix::Identity(m, m));
        g_mat = ((inv - alpha_w * alpha_w.transpose()) / static_cast<long double>(c)).cast<double>();
      }
    }

    ev.value.multinomial_part = data.multinomial;
    ev.value.gaussian_part = data.gaussian();
    ev.value.loglik = data.value();
    ev.value.penalty = 0.0;
    Eigen::VectorXd dw;
    if (lambda) {
      ev.value.penalty = penalty_value(penalty_, wv, *lambda);
      if (with_gradient) dw = penalty_.D * wv;
    }
    ev.value.total = ev.value.loglik - ev.value.penalty;
    ev.finite = std::isfinite(ev.value.total);
    if (!ev.finite || !with_gradient) return ev;

    // Adjoint coefficients on each bin's mixture moment of order o.
    std::vector<std::vector<double>> coef(J);
    for (std::size_t j = 0; j < J; ++j) {
      coef[j].assign(static_cast<std::size_t>(grad_orders_[j]) + 1, 0.0);
      if (summary_.pi_hat()[j] > 0.0) coef[j][0] = c * summary_.pi_hat()[j] / trip.pi[j];
    }
    if (m > 0) {
      Eigen::VectorXd mu_vec(m);
      for (Eigen::Index a = 0; a < m; ++a) mu_vec[a] = mu[static_cast<std::size_t>(a)];
      const Eigen::VectorXd g_mu = g_mat * mu_vec;
      Eigen::Index a0 = 0;
      for (std::size_t j = 0; j < J; ++j) {
        for (int oa = 1; oa <= k_[j]; ++oa) {
          const Eigen::Index a = a0 + oa - 1;
          coef[j][static_cast<std::size_t>(oa)] += -alpha[a] + g_mu[a];
          for (int ob = 1; ob <= k_[j]; ++ob) {
            const Eigen::Index b = a0 + ob - 1;
            coef[j][static_cast<std::size_t>(oa + ob)] += -0.5 * g_mat(a, b);
          }
        }
        a0 += k_[j];
      }
    }

    ev.gradient = Eigen::VectorXd::Zero(n + 1);
    Eigen::VectorXd shape(n);
    for (int i = 0; i < n; ++i) shape[i] = i + 1.0;
    double d_theta = 0.0;
    for (std::size_t j = 0; j < J; ++j) {
      for (int o = 0; o < grad_orders_[j]; ++o) {
        const double cf = coef[j][static_cast<std::size_t>(o)];
        if (cf == 0.0) continue;
        const Eigen::VectorXd& t_o = table.at(j, o);
        ev.gradient.head(n) += cf * t_o;
        const Eigen::VectorXd dt = (table.at(j, o + 1).array() - theta * shape.array() * t_o.array()) /
                                   (theta * theta);
        d_theta += cf * wv.dot(dt);
      }
    }
    ev.gradient[n] = d_theta;
    if (lambda) ev.gradient.head(n) -= *lambda * (penalty_.D.transpose() * dw);
    return ev;
  }

  /// Unconstrained coordinates x = (s_1..s_n, t) with w = s^2 / sum s^2 and theta = t^2.
  static void from_unconstrained(const Eigen::VectorXd& x, std::vector<double>& w, double& theta) {
    const auto n = x.size() - 1;
    const double s2 = x.head(n).squaredNorm();
    w.resize(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) w[static_cast<std::size_t>(i)] = x[i] * x[i] / s2;
    theta = x[n] * x[n];
  }

  static Eigen::VectorXd to_unconstrained(const ErlangMixture& mix) {
    Eigen::VectorXd x(mix.size() + 1);
    for (int i = 0; i < mix.size(); ++i) x[i] = std::sqrt(mix.weights()[static_cast<std::size_t>(i)]);
    x[mix.size()] = std::sqrt(mix.scale());
    return x;
  }

  /// Chain rule from d/d(w, theta) to d/d(s, t).
  static Eigen::VectorXd chain_unconstrained(const Eigen::VectorXd& x, const Eigen::VectorXd& g_nat) {
    const auto n = x.size() - 1;
    const double s2 = x.head(n).squaredNorm();
    Eigen::VectorXd w = x.head(n).array().square() / s2;
    const double wg = w.dot(g_nat.head(n));
    Eigen::VectorXd out(n + 1);
    out.head(n) = (2.0 / s2) * x.head(n).array() * (g_nat.head(n).array() - wg);
    out[n] = 2.0 * x[n] * g_nat[n];
    return out;
  }

  /// Total objective in unconstrained coordinates, optionally with its gradient.
  Evaluation evaluate_unconstrained(const Eigen::VectorXd& x, std::optional<double> lambda,
                                    bool with_gradient) const {
    std::vector<double> w;
    double theta = 0.0;
    if (!(x.head(x.size() - 1).squaredNorm() > 0.0)) return {};
    from_unconstrained(x, w, theta);
    auto ev = evaluate(w, theta, lambda, with_gradient);
    if (ev.finite && with_gradient) ev.gradient = chain_unconstrained(x, ev.gradient);
    return ev;
  }

 private:
  detail::WideMatrix wide_covariance(const std::vector<std::vector<long double>>& moments, double c) const {
    std::vector<std::size_t> bin_of;
    std::vector<int> order_of;
    for (std::size_t j = 0; j < k_.size(); ++j)
      for (int o = 1; o <= k_[j]; ++o) {
        bin_of.push_back(j);
        order_of.push_back(o);
      }
    const auto m = static_cast<Eigen::Index>(bin_of.size());
    detail::WideMatrix s(m, m);
    for (Eigen::Index a = 0; a < m; ++a) {
      const auto ja = bin_of[static_cast<std::size_t>(a)];
      const int oa = order_of[static_cast<std::size_t>(a)];
      for (Eigen::Index b = 0; b <= a; ++b) {
        const auto jb = bin_of[static_cast<std::size_t>(b)];
        const int ob = order_of[static_cast<std::size_t>(b)];
        long double v = -moments[ja][static_cast<std::size_t>(oa)] * moments[jb][static_cast<std::size_t>(ob)];
        if (ja == jb) v += moments[ja][static_cast<std::size_t>(oa + ob)];
        s(a, b) = s(b, a) = v / static_cast<long double>(c);
      }
    }
    return s;
  }

  LocalMomentSummary summary_;
  PenaltyBundle penalty_;
  bool scale_by_n_;
  std::vector<int> k_;
  std::vector<int> grad_orders_;
  std::vector<double> mu_hat_;
};

/// l(w, theta, lambda) split into its data and prior parts.
inline ObjectiveValue penalized_loglik(const ErlangMixture& mix, double lambda,
                                       const LocalMomentSummary& summary,
                                       const PenaltyBundle& penalty, bool scale_by_n = true) {
  if (!(lambda > 0.0)) throw DomainError("penalized_loglik: lambda must be positive");
  if (mix.size() != penalty.n) throw DomainError("penalized_loglik: penalty built for another n");
  const PenalizedObjective obj(summary, penalty, scale_by_n);
  auto ev = obj.evaluate(mix.weights(), mix.scale(), lambda, false);
  if (ev.singular) throw SingularMatrixError("penalized_loglik: moment covariance is singular");
  if (!ev.finite) {
    ev.value.loglik = kMinusInf;
    ev.value.total = kMinusInf;
  }
  return ev.value;
}

struct ObjectiveGradient {
  Eigen::VectorXd natural;        // d total / d(w, theta)
  Eigen::VectorXd unconstrained;  // d total / d(s, t) at s = sqrt(w), t = sqrt(theta)
};

inline ObjectiveGradient objective_gradient(const ErlangMixture& mix, double lambda,
                                            const LocalMomentSummary& summary,
                                            const PenaltyBundle& penalty, bool scale_by_n = true) {
  if (!(lambda > 0.0)) throw DomainError("objective_gradient: lambda must be positive");
  const PenalizedObjective obj(summary, penalty, scale_by_n);
  auto ev = obj.evaluate(mix.weights(), mix.scale(), lambda, true);
  if (!ev.finite) throw DomainError("objective_gradient: objective is not finite here");
  const Eigen::VectorXd x = PenalizedObjective::to_unconstrained(mix);
  return {ev.gradient, PenalizedObjective::chain_unconstrained(x, ev.gradient)};
}

}  // namespace momentfit
