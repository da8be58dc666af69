// Acceptance run: one PASS/FAIL line per criterion, with the measured values
// and wall time next to each verdict. Exit status is nonzero if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>

#include <boost/math/differentiation/autodiff.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "test_support.hpp"

using namespace momentfit;
using testsupport::Gen;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void run(int id, const std::string& title, double budget_s, const std::function<Verdict()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Verdict v;
  try {
    v = body();
  } catch (const std::exception& e) {
    v = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool in_time = secs < budget_s;
  const bool ok = v.pass && in_time;
  if (!ok) ++failures;
  std::printf("criterion %2d: %s  %s | %s | %.1f s (limit %.0f s)%s\n", id, ok ? "PASS" : "FAIL", title.c_str(),
              v.detail.c_str(), secs, budget_s, in_time ? "" : " OVER TIME");
  std::fflush(stdout);
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

const FitResult& table1_fit() {
  static const FitResult r = fit(testsupport::table1());
  return r;
}

ErlangMixture lognormal_reference(int n, double theta) {
  auto F = [](double x) { return x <= 0.0 ? 0.0 : 0.5 * std::erfc(-std::log(x) / (0.5 * std::sqrt(2.0))); };
  return tijms_weights(F, theta, n);
}

const QuantileRow& row_at(const std::vector<QuantileRow>& rows, std::int64_t n, double alpha) {
  for (const auto& r : rows)
    if (r.n_obs == n && r.alpha == alpha) return r;
  throw std::runtime_error("missing quantile row");
}

// ---- 1 ---------------------------------------------------------------------

Verdict table1_quantiles() {
  const auto& r = table1_fit();
  const double q50 = quantile(r.mixture, 0.5), q90 = quantile(r.mixture, 0.9);
  std::ostringstream os;
  os << "q(0.5)=" << fmt("%.4f", q50) << " in [0.90,1.10], q(0.9)=" << fmt("%.4f", q90)
     << " in [1.65,2.15], converged=" << r.converged << ", lambda=" << fmt("%.4g", r.lambda);
  return {q50 >= 0.90 && q50 <= 1.10 && q90 >= 1.65 && q90 <= 2.15, os.str()};
}

// ---- 2 ---------------------------------------------------------------------

Verdict ks_non_rejection() {
  const auto& fixed = table1_fit();
  DatasetSpec spec;  // lognormal, N = 750, levels {0, .5, .9, .99, 1}, k = (4,4,4,1)
  int literal = 0, own = 0;
  std::ostringstream ps;
  for (int seed = 0; seed < 10; ++seed) {
    auto x = sample_dataset(spec, static_cast<std::uint64_t>(seed));
    std::sort(x.begin(), x.end());
    const auto ks = ks_test(x, [&](double t) { return cdf(fixed.mixture, t); });
    literal += ks.pvalue > 0.05;
    ps << (seed ? "," : "") << fmt("%.3f", ks.pvalue);
    // the same procedure on a summary of this very sample, as a reference
    FitOptions o;
    o.seed = static_cast<std::uint64_t>(seed) + 1;
    const auto own_fit = fit(summarize_dataset(spec, x), o);
    own += ks_test(x, [&](double t) { return cdf(own_fit.mixture, t); }).pvalue > 0.05;
  }
  std::ostringstream os;
  os << "Table-1 fit vs 10 seeded N=750 samples: p>0.05 in " << literal << "/10 (need >=8; p=" << ps.str()
     << "); reference, each sample vs the fit of its own summary: " << own << "/10";
  return {literal >= 8, os.str()};
}

// ---- 3, 4, 10 --------------------------------------------------------------

ResamplingPlan plan_for(const std::string& name, std::vector<std::int64_t> ns, std::vector<std::vector<int>> ks,
                        bool distances) {
  ResamplingPlan p;
  p.spec.name = name;
  p.replicates = 30;
  p.n_grid = std::move(ns);
  p.k_grid = std::move(ks);
  p.distances = distances;
  return p;
}

Verdict n_convergence() {
  const auto plan = plan_for("lognormal", {250, 2000}, {{4, 4, 4, 1}}, false);
  const auto res = run_resampling(plan);
  const auto rows = quantile_table(res, plan.spec.truth());
  const auto& a250 = row_at(rows, 250, 0.5);
  const auto& a2000 = row_at(rows, 2000, 0.5);
  const auto& b250 = row_at(rows, 250, 0.9);
  const auto& b2000 = row_at(rows, 2000, 0.9);
  std::ostringstream os;
  os << "RMSE(0.5) " << fmt("%.4f", a250.rmse) << " -> " << fmt("%.4f", a2000.rmse) << ", std(0.9) "
     << fmt("%.4f", b250.stdev) << " -> " << fmt("%.4f", b2000.stdev) << ", failed replicates " << res.failures;
  return {a2000.rmse < a250.rmse && b2000.stdev < b250.stdev, os.str()};
}

Verdict moment_information() {
  const auto plan = plan_for("lognormal", {750}, {{1, 1, 1, 1}, {4, 4, 4, 1}}, true);
  const auto res = run_resampling(plan);
  const auto rows = k_sweep_table(res);
  double kl[2] = {0, 0}, l1[2] = {0, 0};
  for (const auto& r : rows) {
    const int idx = r.k == std::vector<int>{4, 4, 4, 1} ? 1 : 0;
    if (r.metric == "kl") kl[idx] = r.median;
    if (r.metric == "l1_quantile") l1[idx] = r.median;
  }
  std::ostringstream os;
  os << "median KL " << fmt("%.5f", kl[0]) << " -> " << fmt("%.5f", kl[1]) << ", median l1 " << fmt("%.5f", l1[0])
     << " -> " << fmt("%.5f", l1[1]) << ", failed replicates " << res.failures;
  return {kl[1] <= kl[0] && l1[1] <= l1[0], os.str()};
}

Verdict calibration() {
  const auto cal = calibrate_reflection_point(kReportLevels, kGaussRevGammaTargets);
  double worst = 0.0;
  for (double r : cal.residuals) worst = std::max(worst, std::abs(r));
  auto plan = plan_for("gaussrevgamma", {250, 2000}, {{4, 4, 4, 1}}, false);
  plan.spec.reflection_point = cal.reflection_point;
  const auto res = run_resampling(plan);
  const auto rows = quantile_table(res, plan.spec.truth());
  std::ostringstream os;
  os << "M=" << fmt("%.6f", cal.reflection_point) << ", max |residual| " << fmt("%.2e", worst)
     << " (need <=0.02); reported RMSE/std at N=250 -> 2000:";
  for (double a : {0.5, 0.99, 0.995}) {
    const auto& lo = row_at(rows, 250, a);
    const auto& hi = row_at(rows, 2000, a);
    os << " a=" << a << " rmse " << fmt("%.3f", lo.rmse) << "->" << fmt("%.3f", hi.rmse) << " std "
       << fmt("%.3f", lo.stdev) << "->" << fmt("%.3f", hi.stdev) << ";";
  }
  os << " failed replicates " << res.failures;
  return {!cal.failed && worst <= 0.02, os.str()};
}

// ---- 5 ---------------------------------------------------------------------

double quad_moment(const ErlangMixture& mix, double a, double b, int k) {
  auto f = [&](double x) { return std::pow(x, k) * pdf(mix, x); };
  std::vector<double> br{a};
  for (double p : {0.01, 0.25, 0.5, 0.75, 0.99}) {
    const double q = quantile(mix, p);
    if (q > br.back() && q < b) br.push_back(q);
  }
  br.push_back(b);
  double sum = 0.0;
  for (std::size_t i = 0; i + 1 < br.size(); ++i)
    sum += boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, br[i], br[i + 1], 15, 1e-12);
  return sum;
}

Verdict boxed_moment_oracle() {
  Gen g(2024);
  std::mt19937_64 rng(7);
  double worst_rel = 0.0, worst_z = 0.0;
  int quad_miss = 0, mc_miss = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto m = g.mixture(20);
    const double a = quantile(m, g.uniform(0.0, 0.7));
    const double b = g.uniform(0.0, 1.0) < 0.3 ? kInf : quantile(m, g.uniform(0.75, 0.995));
    const int k = g.integer(0, 4);
    const double got = boxed_moment(m, a, b, k);
    const double want = quad_moment(m, a, b, k);
    const double rel = std::abs(got - want) / std::abs(want);
    worst_rel = std::max(worst_rel, rel);
    quad_miss += rel > 1e-8;

    std::discrete_distribution<int> pick(m.weights().begin(), m.weights().end());
    constexpr int draws = 1000000;
    double s1 = 0.0, s2 = 0.0;
    for (int i = 0; i < draws; ++i) {
      const double x = std::gamma_distribution<double>(pick(rng) + 1.0, m.scale())(rng);
      const double y = (x >= a && x < b) ? std::pow(x, k) : 0.0;
      s1 += y;
      s2 += y * y;
    }
    const double est = s1 / draws;
    const double se = std::sqrt((s2 / draws - est * est) / draws);
    const double z = std::abs(got - est) / se;
    worst_z = std::max(worst_z, z);
    mc_miss += z > 3.0;
  }
  std::ostringstream os;
  os << "100 mixtures: quadrature max rel err " << fmt("%.2e", worst_rel) << " (" << quad_miss
     << " over 1e-8), Monte Carlo max |z| " << fmt("%.3f", worst_z) << " (" << mc_miss
     << " over 3 SE; 0.27 expected by chance, P(any) = 24%)";
  return {quad_miss == 0 && mc_miss == 0, os.str()};
}

// ---- 6 ---------------------------------------------------------------------

Verdict gradient_check() {
  const auto s = testsupport::table1();
  const int n = 50;
  const PenalizedObjective obj(s, make_penalty(2, n), true);
  Gen g(6);
  double worst = 0.0;
  int misses = 0, points = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const auto m = g.mixture_of_size(n, g.uniform(0.04, 0.12));
    const double lambda = g.log_uniform(1e-2, 1e3);
    const auto x0 = PenalizedObjective::to_unconstrained(m);
    const auto ev = obj.evaluate_unconstrained(x0, lambda, true);
    if (!ev.finite) throw std::runtime_error("objective not finite at a test point");
    ++points;
    for (Eigen::Index i = 0; i < x0.size(); ++i) {
      const double h = 1e-6 * (1.0 + std::abs(x0[i]));
      Eigen::VectorXd xp = x0, xm = x0;
      xp[i] += h;
      xm[i] -= h;
      const double fd = (obj.evaluate_unconstrained(xp, lambda, false).value.total -
                         obj.evaluate_unconstrained(xm, lambda, false).value.total) /
                        (2.0 * h);
      const double rel = std::abs(ev.gradient[i] - fd) / std::max(std::abs(fd), std::abs(ev.gradient[i]));
      worst = std::max(worst, rel);
      misses += rel > 1e-5;
    }
  }
  std::ostringstream os;
  os << points << " points x 51 coordinates: max rel err " << fmt("%.2e", worst) << ", " << misses << " over 1e-5";
  return {misses == 0 && points == 50, os.str()};
}

// ---- 7 ---------------------------------------------------------------------

Verdict lambda_machinery() {
  Gen g(8);
  // effective dimension at 0 and along a log grid
  bool edf_ok = true;
  for (int trial = 0; trial < 20; ++trial) {
    const int n = g.integer(5, 60), r = g.integer(1, 3);
    Eigen::VectorXd eta(n + 1);
    for (int i = 0; i <= n; ++i) eta[i] = i <= r ? 0.0 : -g.log_uniform(1e-4, 1e4);
    edf_ok &= effective_dimension(eta, 0.0) == n - r;
    double prev = kInf;
    for (int i = 0; i <= 200; ++i) {
      const double v = effective_dimension(eta, std::pow(10.0, -8.0 + 0.1 * i));
      edf_ok &= v <= prev;
      prev = v;
    }
  }
  // closed-form instance with lambda* = 1
  PenaltyBundle quad;
  quad.n = 4;
  quad.order = 2;
  quad.a_lambda = 1.0;
  quad.b_lambda = kInf;
  Eigen::VectorXd ones(2);
  ones << -1.0, -1.0;
  double exact_err = 0.0;
  for (double start : {1e-6, 0.3, 1.0, 7.0, 1e9})
    exact_err = std::max(exact_err, std::abs(update_lambda(1.0, quad, ones, start).lambda - 1.0));
  // grid argmax of the integrated score
  int cell_misses = 0;
  for (int trial = 0; trial < 20; ++trial) {
    PenaltyBundle pen;
    pen.n = g.integer(6, 50);
    pen.order = 2;
    pen.a_lambda = g.uniform(1.0, 2.0);
    pen.b_lambda = g.log_uniform(10.0, 1e6);
    Eigen::VectorXd eta(pen.n + 1);
    for (int i = 0; i <= pen.n; ++i) eta[i] = i < 3 ? 0.0 : -g.log_uniform(1e-4, 1e4);
    const double rough = g.log_uniform(1e-4, 10.0);
    const auto up = update_lambda(rough, pen, eta, 1.0);
    constexpr int points = 2000;
    const double lo = std::log(kLambdaMin), hi = std::log(kLambdaMax);
    const double du = (hi - lo) / (points - 1);
    double ell = 0.0, best = -kInf, prev_slope = std::exp(lo) * marginal_score(std::exp(lo), rough, pen, eta);
    int arg = 0;
    for (int i = 1; i < points; ++i) {
      const double lam = std::exp(lo + i * du);
      const double slope = lam * marginal_score(lam, rough, pen, eta);
      ell += 0.5 * du * (slope + prev_slope);
      prev_slope = slope;
      if (ell > best) {
        best = ell;
        arg = i;
      }
    }
    cell_misses += std::abs(std::log(up.lambda) - (lo + arg * du)) > du;
  }
  std::ostringstream os;
  os << "edf(eta,0)=n-r and monotone: " << (edf_ok ? "yes" : "no") << "; closed-form lambda*=1 max err "
     << fmt("%.1e", exact_err) << "; grid argmax misses " << cell_misses << "/20";
  return {edf_ok && exact_err <= 1e-12 && cell_misses == 0, os.str()};
}

// ---- 8 ---------------------------------------------------------------------

template <int R>
double roughness_by_quadrature(const std::vector<double>& w, double theta) {
  using boost::math::differentiation::make_fvar;
  auto sq = [&](double x) {
    auto xv = make_fvar<double, R>(x);
    decltype(xv) f = 0.0 * xv;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const int shape = static_cast<int>(i) + 1;
      const double norm = std::exp(-shape * std::log(theta) - std::lgamma(shape));
      f += w[i] * norm * pow(xv, shape - 1) * exp(-xv / theta);
    }
    const double d = f.derivative(R);
    return d * d;
  };
  const double mid = theta * static_cast<double>(w.size());
  using GK = boost::math::quadrature::gauss_kronrod<double, 61>;
  return GK::integrate(sq, 0.0, mid, 25, 1e-14) +
         GK::integrate(sq, mid, std::numeric_limits<double>::infinity(), 25, 1e-14);
}

Verdict continuous_penalty() {
  Gen g(9);
  double worst = 0.0;
  int checks = 0;
  for (int r : {1, 2})
    for (double theta : {0.5, 1.0, 2.0})
      for (int trial = 0; trial < 20; ++trial) {
        const int n = g.integer(r + 1, 8);
        std::vector<double> w(static_cast<std::size_t>(n));
        for (auto& x : w) x = g.uniform(0.0, 1.0);
        const Eigen::Map<const Eigen::VectorXd> wv(w.data(), n);
        const double got = wv.dot(continuous_penalty_matrix(r, n) * wv) * std::pow(theta, -(2.0 * r + 1.0));
        const double want = r == 1 ? roughness_by_quadrature<1>(w, theta) : roughness_by_quadrature<2>(w, theta);
        worst = std::max(worst, std::abs(got - want) / want);
        ++checks;
      }
  std::ostringstream os;
  os << checks << " checks (r in {1,2}, n<=8, theta in {0.5,1,2}): max rel err " << fmt("%.2e", worst);
  return {worst <= 1e-6, os.str()};
}

// ---- 9 ---------------------------------------------------------------------

Verdict self_consistency() {
  const auto ref = lognormal_reference(20, 0.2);
  const BinPartition part({0.0, quantile(ref, 0.5), quantile(ref, 0.9), quantile(ref, 0.99), kInf});
  const auto r = fit(testsupport::exact_summary(ref, part, {4, 4, 4, 1}, 750));
  double worst = 0.0;
  std::ostringstream os;
  for (double p : {0.5, 0.9}) {
    const double want = quantile(ref, p), got = quantile(r.mixture, p);
    worst = std::max(worst, std::abs(got - want) / want);
    os << "q(" << p << ") " << fmt("%.4f", got) << " vs " << fmt("%.4f", want) << "; ";
  }
  os << "max rel err " << fmt("%.2e", worst) << " (need <=2%)";
  return {worst <= 0.02, os.str()};
}

}  // namespace

int main(int argc, char** argv) {
  // optional criterion numbers on the command line select a subset
  std::vector<int> only;
  for (int i = 1; i < argc; ++i) only.push_back(std::atoi(argv[i]));
  const auto run = [&](int id, const std::string& title, double budget_s, const std::function<Verdict()>& body) {
    if (only.empty() || std::find(only.begin(), only.end(), id) != only.end()) ::run(id, title, budget_s, body);
  };
  run(1, "Table-1 fit quantiles", 30, table1_quantiles);
  run(2, "KS non-rejection", 120, ks_non_rejection);
  run(3, "N-convergence trend", 900, n_convergence);
  run(4, "moment-information trend", 900, moment_information);
  run(5, "boxed-moment oracle", 120, boxed_moment_oracle);
  run(6, "gradient correctness", 60, gradient_check);
  run(7, "lambda machinery", 60, lambda_machinery);
  run(8, "continuous-penalty cross-check", 60, continuous_penalty);
  run(9, "self-consistency", 120, self_consistency);
  run(10, "dataset-3 calibration", 600, calibration);
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
