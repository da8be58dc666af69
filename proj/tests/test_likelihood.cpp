#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "test_support.hpp"

using namespace momentfit;
using testsupport::Gen;

namespace {

ErlangMixture smooth_mixture(int n, double theta) {
  auto F = [](double x) { return x <= 0.0 ? 0.0 : 0.5 * std::erfc(-std::log(x) / (0.5 * std::sqrt(2.0))); };
  return tijms_weights(F, theta, n);
}

}  // namespace

TEST(DataLoglik, SaturatedSingleBin) {
  const LocalMomentSummary s(BinPartition({0.0, kInf}), 100, {1.0}, {{}});
  Gen g(1);
  for (int trial = 0; trial < 20; ++trial) {
    const auto m = g.mixture(20);
    const int k[] = {0};
    EXPECT_NEAR(data_loglik(model_triplet(m, s.partition(), k), s, true), 0.0, 1e-13);
    EXPECT_NEAR(data_loglik(model_triplet(m, s.partition(), k), s, false), 0.0, 1e-15);
  }
}

TEST(DataLoglik, TwoBinsNoMoments) {
  const LocalMomentSummary s(BinPartition({0.0, std::log(2.0), kInf}), 10, {0.5, 0.5}, {{}, {}});
  const ErlangMixture exp1({1.0}, 1.0);
  const int k[] = {0, 0};
  EXPECT_NEAR(data_loglik(model_triplet(exp1, s.partition(), k), s, false), std::log(0.5), 1e-15);
  EXPECT_NEAR(data_loglik(model_triplet(exp1, s.partition(), k), s, true), 10.0 * std::log(0.5), 1e-13);
}

TEST(DataLoglik, ExactMomentsLeaveLogDetOnly) {
  Gen g(2);
  const auto m = g.mixture_of_size(15, 0.3);
  const auto part = BinPartition({0.0, 1.0, 2.0, 4.0, kInf});
  const std::vector<int> k{3, 2, 2, 1};
  const auto s = testsupport::exact_summary(m, part, k, 500);
  const auto trip = model_triplet(m, part, k);
  for (bool scaled : {false, true}) {
    const double c = scaled ? 500.0 : 1.0;
    auto parts = data_loglik_parts(trip.pi, flatten(trip.mu), trip.sigma, s.pi_hat(), flatten(s.mu_hat()), 500,
                                   scaled);
    ASSERT_TRUE(parts.has_value());
    EXPECT_NEAR(parts->mahalanobis, 0.0, 1e-12);
    const Eigen::MatrixXd eff = trip.sigma / c;
    const double logdet = std::log(eff.llt().matrixL().toDenseMatrix().diagonal().array().square().prod());
    EXPECT_NEAR(parts->gaussian(), -0.5 * logdet, 1e-8 * std::abs(logdet));
  }
}

TEST(DataLoglik, ImpossibleBinIsMinusInfinity) {
  const double pi[] = {1.0, 0.0};
  const double pi_hat[] = {0.9, 0.1};
  auto parts = data_loglik_parts(pi, {}, Eigen::MatrixXd(0, 0), pi_hat, {}, 10, false);
  ASSERT_TRUE(parts.has_value());
  EXPECT_TRUE(std::isinf(parts->multinomial) && parts->multinomial < 0.0);
  // an empty observed bin costs nothing even when the model gives it zero mass
  const double pi_hat2[] = {1.0, 0.0};
  EXPECT_EQ(data_loglik_parts(pi, {}, Eigen::MatrixXd(0, 0), pi_hat2, {}, 10, false)->multinomial, 0.0);
}

TEST(DataLoglik, SingularCovarianceThrows) {
  const LocalMomentSummary s(BinPartition({0.0, kInf}), 10, {1.0}, {{1.0, 2.0}});
  MomentTriplet t;
  t.pi = {1.0};
  t.mu = {{1.0, 2.0}};
  t.sigma = Eigen::MatrixXd::Zero(2, 2);
  EXPECT_THROW(data_loglik(t, s, false), SingularMatrixError);
  // jitter rescues a nearly singular but nonzero matrix
  t.sigma << 1.0, 1.0, 1.0, 1.0;
  EXPECT_NO_THROW(data_loglik(t, s, false));
}

TEST(DataLoglik, PermutationInvariance) {
  Gen g(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto m = g.mixture_of_size(12, g.uniform(0.2, 0.6));
    const auto part = g.partition(4, 5.0);
    std::vector<int> k(part.size());
    for (auto& kj : k) kj = g.integer(0, 3);
    const auto trip = model_triplet(m, part, k);
    const auto s = testsupport::exact_summary(testsupport::Gen(trial).mixture_of_size(12, 0.4), part, k, 300);

    // reversed bin order, flattened consistently on both sides
    const std::size_t J = part.size();
    std::vector<std::size_t> order(J);
    std::iota(order.begin(), order.end(), 0);
    std::reverse(order.begin(), order.end());
    std::vector<std::size_t> offset(J, 0);
    for (std::size_t j = 1; j < J; ++j) offset[j] = offset[j - 1] + static_cast<std::size_t>(k[j - 1]);
    std::vector<double> pi, pi_hat, mu, mu_hat;
    std::vector<std::size_t> rows;
    for (std::size_t j : order) {
      pi.push_back(trip.pi[j]);
      pi_hat.push_back(s.pi_hat()[j]);
      for (int o = 0; o < k[j]; ++o) {
        mu.push_back(trip.mu[j][static_cast<std::size_t>(o)]);
        mu_hat.push_back(s.mu_hat()[j][static_cast<std::size_t>(o)]);
        rows.push_back(offset[j] + static_cast<std::size_t>(o));
      }
    }
    const auto M = static_cast<Eigen::Index>(rows.size());
    Eigen::MatrixXd sig(M, M);
    for (Eigen::Index a = 0; a < M; ++a)
      for (Eigen::Index b = 0; b < M; ++b)
        sig(a, b) = trip.sigma(static_cast<Eigen::Index>(rows[static_cast<std::size_t>(a)]),
                               static_cast<Eigen::Index>(rows[static_cast<std::size_t>(b)]));
    const auto permuted = data_loglik_parts(pi, mu, sig, pi_hat, mu_hat, 300, true);
    ASSERT_TRUE(permuted.has_value());
    const double direct = data_loglik(trip, s, true);
    EXPECT_NEAR(permuted->value(), direct, 1e-9 * (1.0 + std::abs(direct)));
  }
}

TEST(DataLoglik, ScalesAffinelyInN) {
  const auto s1 = testsupport::table1();
  const auto m = smooth_mixture(50, 0.1);
  const auto trip = model_triplet(m, s1.partition(), s1.k());
  const auto mu = flatten(trip.mu);
  const auto mu_hat = flatten(s1.mu_hat());
  const auto base = *data_loglik_parts(trip.pi, mu, trip.sigma, s1.pi_hat(), mu_hat, 750, true);
  const double m_count = static_cast<double>(mu.size());
  for (double c : {2.0, 3.0, 10.0}) {
    const auto n = static_cast<std::int64_t>(750 * c);
    const auto scaled = *data_loglik_parts(trip.pi, mu, trip.sigma, s1.pi_hat(), mu_hat, n, true);
    EXPECT_NEAR(scaled.multinomial, c * base.multinomial, 1e-10 * std::abs(c * base.multinomial));
    EXPECT_NEAR(scaled.mahalanobis, c * base.mahalanobis, 1e-6 * c * base.mahalanobis);
    EXPECT_NEAR(scaled.log_det, base.log_det - m_count * std::log(c), 1e-8 * std::abs(base.log_det));
  }
}

TEST(Penalized, HandExample) {
  // n=3, r=1, w=(1,0,0), lambda=1, a=1, b=inf: D w = (1, 0), penalty = 1/2 (0 + 1)
  const auto pen = make_penalty(1, 3, 1.0, kInf);
  const Eigen::Vector3d w(1.0, 0.0, 0.0);
  EXPECT_DOUBLE_EQ(penalty_value(pen, w, 1.0), 0.5);
  const LocalMomentSummary s(BinPartition({0.0, kInf}), 10, {1.0}, {{}});
  const auto v = penalized_loglik(ErlangMixture({1.0, 0.0, 0.0}, 1.0), 1.0, s, pen);
  EXPECT_DOUBLE_EQ(v.penalty, 0.5);
  EXPECT_EQ(v.total, v.loglik - v.penalty);
  EXPECT_THROW(penalized_loglik(ErlangMixture({1.0, 0.0, 0.0}, 1.0), 0.0, s, pen), DomainError);
  EXPECT_THROW(penalized_loglik(ErlangMixture({1.0, 0.0}, 1.0), 1.0, s, pen), DomainError);
}

TEST(Penalized, NullSpaceLeavesLambdaTermsOnly) {
  const int n = 8;
  const auto pen = make_penalty(2, n, 2.0, 50.0);
  // w_j y_{j-1} linear in j lies in the kernel of the second difference
  std::vector<double> w(n);
  for (int j = 0; j < n; ++j) w[static_cast<std::size_t>(j)] = (1.0 + 0.5 * j) / pen.modes[static_cast<std::size_t>(j)].y;
  const auto mix = ErlangMixture::normalized(w, 1.0);
  const Eigen::Map<const Eigen::VectorXd> wv(mix.weights().data(), n);
  EXPECT_NEAR(pen.roughness(wv), 0.0, 1e-25);
  const double lambda = 3.0;
  const double expected = 0.5 * (-(n - 2) * std::log(lambda)) + lambda / 50.0 - (2.0 - 1.0) * std::log(lambda);
  EXPECT_NEAR(penalty_value(pen, wv, lambda), expected, 1e-12);
}

TEST(Penalized, TotalDecreasesWithRoughness) {
  const auto s = testsupport::table1();
  const auto pen = make_penalty(2, 20);
  Gen g(4);
  const auto smooth = smooth_mixture(20, 0.2);
  std::vector<double> rough = smooth.weights();
  for (std::size_t i = 0; i < rough.size(); i += 2) rough[i] *= 1.5;
  // same data term: compare the penalty alone through total - loglik
  for (double lambda : {0.1, 1.0, 100.0}) {
    const auto a = penalized_loglik(smooth, lambda, s, pen);
    const auto b = penalized_loglik(ErlangMixture::normalized(rough, 0.2), lambda, s, pen);
    EXPECT_GT(b.penalty, a.penalty);
    EXPECT_LT(b.total - b.loglik, a.total - a.loglik);
  }
}

TEST(Penalized, ConcaveInLogLambda) {
  const auto s = testsupport::table1();
  Gen g(5);
  for (int trial = 0; trial < 10; ++trial) {
    const auto pen = make_penalty(2, 20, g.uniform(1.0, 5.0), g.log_uniform(1.0, 1e6));
    const auto m = g.mixture_of_size(20, g.uniform(0.1, 0.3));
    std::vector<double> total;
    for (int i = 0; i <= 80; ++i) total.push_back(penalized_loglik(m, std::exp(-10.0 + 0.25 * i), s, pen).total);
    for (std::size_t i = 1; i + 1 < total.size(); ++i)
      EXPECT_GE(total[i], 0.5 * (total[i - 1] + total[i + 1]) - 1e-9 * (1.0 + std::abs(total[i])));
  }
}

TEST(Gradient, MatchesCentralDifferencesTable1) {
  const auto s = testsupport::table1();
  Gen g(6);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 50;
    const auto pen = make_penalty(2, n);
    const auto m = g.mixture_of_size(n, g.uniform(0.04, 0.12));
    const double lambda = g.log_uniform(1e-2, 1e3);
    const PenalizedObjective obj(s, pen, true);
    const auto x0 = PenalizedObjective::to_unconstrained(m);
    const auto ev = obj.evaluate_unconstrained(x0, lambda, true);
    ASSERT_TRUE(ev.finite);
    for (Eigen::Index i = 0; i < x0.size(); ++i) {
      const double h = 1e-6 * (1.0 + std::abs(x0[i]));
      Eigen::VectorXd xp = x0, xm = x0;
      xp[i] += h;
      xm[i] -= h;
      const double fd =
          (obj.evaluate_unconstrained(xp, lambda, false).value.total - obj.evaluate_unconstrained(xm, lambda, false).value.total) /
          (2.0 * h);
      EXPECT_NEAR(ev.gradient[i], fd, 1e-5 * std::max(std::abs(fd), std::abs(ev.gradient[i])))
          << "trial " << trial << " coord " << i;
    }
  }
}

TEST(Gradient, NaturalMatchesCentralDifferences) {
  Gen g(7);
  const auto part = BinPartition({0.0, 0.8, 1.6, 3.0, kInf});
  const std::vector<int> k{2, 2, 1, 1};
  const auto s = testsupport::exact_summary(smooth_mixture(12, 0.25), part, k, 200);
  const auto pen = make_penalty(2, 12);
  for (bool scaled : {false, true}) {
    const PenalizedObjective obj(s, pen, scaled);
    for (int trial = 0; trial < 5; ++trial) {
      const auto m = g.mixture_of_size(12, g.uniform(0.15, 0.35));
      std::vector<double> w = m.weights();
      double theta = m.scale();
      const auto ev = obj.evaluate(w, theta, 2.0, true);
      for (int i = 0; i <= 12; ++i) {
        auto at = [&](double d) {
          auto w2 = w;
          double t2 = theta;
          if (i < 12) w2[static_cast<std::size_t>(i)] += d; else t2 += d;
          return obj.evaluate(w2, t2, 2.0, false).value.total;
        };
        const double h = 1e-6;
        const double fd = (at(h) - at(-h)) / (2.0 * h);
        EXPECT_NEAR(ev.gradient[i], fd, 1e-5 * std::abs(fd) + 1e-5) << i;
      }
    }
  }
}

TEST(Gradient, PenaltyOnlyCase) {
  const LocalMomentSummary s(BinPartition({0.0, kInf}), 40, {1.0}, {{}});
  const auto pen = make_penalty(2, 10);
  Gen g(8);
  for (int trial = 0; trial < 10; ++trial) {
    const auto m = g.mixture_of_size(10, g.uniform(0.2, 2.0));
    const double lambda = g.log_uniform(0.01, 100.0);
    const auto grad = objective_gradient(m, lambda, s, pen);
    const Eigen::Map<const Eigen::VectorXd> w(m.weights().data(), 10);
    Eigen::VectorXd nat = Eigen::VectorXd::Zero(11);
    nat.head(10) = -lambda * (pen.D.transpose() * (pen.D * w));
    const auto x = PenalizedObjective::to_unconstrained(m);
    const Eigen::VectorXd want = PenalizedObjective::chain_unconstrained(x, nat);
    for (int i = 0; i < 11; ++i) EXPECT_NEAR(grad.unconstrained[i], want[i], 1e-9 * (1.0 + std::abs(want[i])));
    EXPECT_NEAR(grad.natural[10], 0.0, 1e-9);
  }
}

TEST(Gradient, UnconstrainedRoundTrip) {
  Gen g(9);
  for (int trial = 0; trial < 20; ++trial) {
    const auto m = g.mixture(30);
    const auto x = PenalizedObjective::to_unconstrained(m);
    std::vector<double> w;
    double theta = 0.0;
    PenalizedObjective::from_unconstrained(x, w, theta);
    EXPECT_NEAR(theta, m.scale(), 1e-14 * m.scale());
    for (std::size_t i = 0; i < w.size(); ++i) EXPECT_NEAR(w[i], m.weights()[i], 1e-15);
  }
}
