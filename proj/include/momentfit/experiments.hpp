#pragma once

// Simulation studies: draw a sample from a reference model, summarize it on
// a partition at its own empirical quantiles, fit, and compare with the truth.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include <boost/math/tools/minima.hpp>

#include "momentfit/csv.hpp"
#include "momentfit/distributions.hpp"
#include "momentfit/fitter.hpp"
#include "momentfit/metrics.hpp"
#include "momentfit/summary_data.hpp"

namespace momentfit {

inline const std::vector<double> kReportLevels{0.5, 0.9, 0.95, 0.99, 0.995};

struct DatasetSpec {
  std::string name = "lognormal";
  std::int64_t n_obs = 750;
  std::vector<double> levels{0.0, 0.5, 0.9, 0.99, 1.0};
  std::vector<int> k{4, 4, 4, 1};
  std::uint64_t seed = 1;
  double reflection_point = kDefaultReflectionPoint;

  void validate() const {
    make_truth(name, reflection_point);
    if (n_obs < 2) throw DomainError("DatasetSpec: n_obs must be >= 2");
    if (levels.size() < 2 || levels.front() != 0.0 || levels.back() != 1.0)
      throw DomainError("DatasetSpec: levels must run from 0 to 1");
    for (std::size_t i = 1; i < levels.size(); ++i)
      if (!(levels[i] > levels[i - 1])) throw DomainError("DatasetSpec: levels must be strictly increasing");
    if (k.size() + 1 != levels.size()) throw DomainError("DatasetSpec: need one moment count per bin");
    for (int kj : k)
      if (kj < 0) throw DomainError("DatasetSpec: moment counts must be >= 0");
  }

  TruthModel truth() const { return make_truth(name, reflection_point); }
};

/// Raw draws for one replicate; the stream depends only on (seed, replicate).
inline std::vector<double> sample_dataset(const DatasetSpec& spec, std::uint64_t replicate) {
  spec.validate();
  auto rng = detail::seeded_stream(spec.seed, 0xda7a5e7u, replicate);
  return spec.truth().sample(rng, static_cast<std::size_t>(spec.n_obs));
}

/// Summary at the sample's own empirical quantiles.
inline LocalMomentSummary summarize_dataset(const DatasetSpec& spec, std::span<const double> sample) {
  const BinPartition part = partition_at_levels(sample, spec.levels);
  return summarize_sample(sample, part, spec.k);
}

inline std::string k_label(const std::vector<int>& k) {
  std::string s;
  for (std::size_t i = 0; i < k.size(); ++i) {
    if (i) s += '-';
    s += std::to_string(k[i]);
  }
  return s;
}

struct ResamplingPlan {
  DatasetSpec spec;
  int replicates = 30;
  std::vector<std::int64_t> n_grid{750};
  std::vector<std::vector<int>> k_grid{{4, 4, 4, 1}};
  FitOptions fit;
  unsigned jobs = 0;  // 0 = hardware concurrency
  bool distances = true;

  void validate() const {
    spec.validate();
    if (replicates < 2) throw DomainError("ResamplingPlan: need at least 2 replicates");
    if (n_grid.empty() || k_grid.empty()) throw DomainError("ResamplingPlan: empty grid");
    for (auto n : n_grid)
      if (n < 2) throw DomainError("ResamplingPlan: N must be >= 2");
    for (const auto& k : k_grid)
      if (k.size() != spec.k.size()) throw DomainError("ResamplingPlan: k vector has the wrong length");
    fit.validate();
  }
};

struct ReplicateRecord {
  std::int64_t n_obs = 0;
  std::vector<int> k;
  int replicate = 0;
  bool ok = false;
  std::string error;
  std::vector<double> quantiles;  // at kReportLevels
  std::optional<DistanceReport> distances;
  double lambda = 0.0;
  double effective_dim = 0.0;
  bool converged = false;
  int outer_iters = 0;
  double seconds = 0.0;
};

/// Fits one (N, k, replicate) cell. Never throws: failures are recorded.
inline ReplicateRecord run_replicate(const ResamplingPlan& plan, const TruthModel& truth,
                                     const Distribution& truth_dist, std::int64_t n_obs,
                                     const std::vector<int>& k, int replicate) {
  ReplicateRecord rec;
  rec.n_obs = n_obs;
  rec.k = k;
  rec.replicate = replicate;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    DatasetSpec spec = plan.spec;
    spec.n_obs = n_obs;
    spec.k = k;
    auto rng = detail::seeded_stream(spec.seed, 0xda7a5e7u, static_cast<std::uint64_t>(replicate));
    std::vector<double> sample = truth.sample(rng, static_cast<std::size_t>(n_obs));
    const LocalMomentSummary summary = summarize_dataset(spec, sample);
    FitOptions opt = plan.fit;
    opt.seed = plan.fit.seed + static_cast<std::uint64_t>(replicate);
    const FitResult fit = momentfit::fit(summary, opt);
    rec.lambda = fit.lambda;
    rec.effective_dim = fit.effective_dim;
    rec.converged = fit.converged;
    rec.outer_iters = fit.outer_iters;
    for (double a : kReportLevels) rec.quantiles.push_back(quantile(fit.mixture, a));
    if (plan.distances) {
      std::sort(sample.begin(), sample.end());
      rec.distances = distance_report(truth_dist, as_distribution(fit.mixture), sample);
    }
    rec.ok = std::all_of(rec.quantiles.begin(), rec.quantiles.end(), [](double q) { return std::isfinite(q); });
    if (!rec.ok) rec.error = "non-finite fitted quantile";
  } catch (const std::exception& e) {
    rec.ok = false;
    rec.error = e.what();
  }
  rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

struct ResamplingResult {
  std::vector<ReplicateRecord> records;  // ordered by (N, k, replicate)
  int failures = 0;
  double seconds = 0.0;
};

/// All (N, k, replicate) cells, run on a bounded worker pool. Results land in
/// fixed slots so the output does not depend on scheduling.
inline ResamplingResult run_resampling(const ResamplingPlan& plan) {
  plan.validate();
  const TruthModel truth = plan.spec.truth();
  const Distribution truth_dist = truth.distribution();
  struct Cell {
    std::int64_t n;
    std::size_t k;
    int rep;
  };
  std::vector<Cell> cells;
  for (auto n : plan.n_grid)
    for (std::size_t ki = 0; ki < plan.k_grid.size(); ++ki)
      for (int r = 0; r < plan.replicates; ++r) cells.push_back({n, ki, r});

  ResamplingResult out;
  out.records.resize(cells.size());
  const auto t0 = std::chrono::steady_clock::now();
  unsigned jobs = plan.jobs ? plan.jobs : std::max(1u, std::thread::hardware_concurrency());
  jobs = std::min<unsigned>(jobs, static_cast<unsigned>(cells.size()));
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++)
      out.records[i] = run_replicate(plan, truth, truth_dist, cells[i].n, plan.k_grid[cells[i].k], cells[i].rep);
  };
  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < jobs; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& r : out.records)
    if (!r.ok) ++out.failures;
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

struct QuantileRow {
  std::int64_t n_obs = 0;
  std::vector<int> k;
  double alpha = 0.0;
  double truth = 0.0;
  double mean = 0.0;
  double bias = 0.0;
  double stdev = 0.0;  // population standard deviation, so rmse^2 = bias^2 + std^2
  double rmse = 0.0;
  int count = 0;
};

/// Mean, bias, std and RMSE of the fitted quantiles per (N, k, alpha) over
/// the successful replicates.
inline std::vector<QuantileRow> quantile_table(const ResamplingResult& res, const TruthModel& truth) {
  std::map<std::pair<std::int64_t, std::vector<int>>, std::vector<const ReplicateRecord*>> groups;
  std::vector<std::pair<std::int64_t, std::vector<int>>> order;
  for (const auto& r : res.records) {
    auto key = std::make_pair(r.n_obs, r.k);
    if (!groups.count(key)) order.push_back(key);
    if (r.ok) groups[key].push_back(&r);
    else groups[key];
  }
  std::vector<QuantileRow> rows;
  for (const auto& key : order) {
    const auto& recs = groups[key];
    for (std::size_t a = 0; a < kReportLevels.size(); ++a) {
      QuantileRow row;
      row.n_obs = key.first;
      row.k = key.second;
      row.alpha = kReportLevels[a];
      row.truth = truth.quantile(row.alpha);
      row.count = static_cast<int>(recs.size());
      if (recs.empty()) {
        row.mean = row.bias = row.stdev = row.rmse = std::numeric_limits<double>::quiet_NaN();
      } else {
        double sum = 0.0;
        for (auto* r : recs) sum += r->quantiles[a];
        row.mean = sum / row.count;
        double ss = 0.0, se = 0.0;
        for (auto* r : recs) {
          ss += (r->quantiles[a] - row.mean) * (r->quantiles[a] - row.mean);
          se += (r->quantiles[a] - row.truth) * (r->quantiles[a] - row.truth);
        }
        row.bias = row.mean - row.truth;
        row.stdev = std::sqrt(ss / row.count);
        row.rmse = std::sqrt(se / row.count);
      }
      rows.push_back(row);
    }
  }
  return rows;
}

inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

inline const std::vector<std::string> kDistanceNames{"l2_quantile", "l2_cdf", "l1_quantile", "kl"};

inline double distance_value(const DistanceReport& d, const std::string& metric) {
  if (metric == "l2_quantile") return d.l2_quantile;
  if (metric == "l2_cdf") return d.l2_cdf;
  if (metric == "l1_quantile") return d.l1_quantile;
  if (metric == "kl") return d.kl;
  throw DomainError("unknown metric: " + metric);
}

struct KSweepRow {
  std::int64_t n_obs = 0;
  std::vector<int> k;
  std::string metric;
  double median = 0.0;
  double relative = 0.0;  // median / median at the least informative k for this N
  int count = 0;
};

/// Median distances per (N, k); `relative` is normalized by the k vector with
/// the fewest moments.
inline std::vector<KSweepRow> k_sweep_table(const ResamplingResult& res) {
  std::vector<KSweepRow> rows;
  std::vector<std::int64_t> ns;
  std::vector<std::vector<int>> ks;
  for (const auto& r : res.records) {
    if (std::find(ns.begin(), ns.end(), r.n_obs) == ns.end()) ns.push_back(r.n_obs);
    if (std::find(ks.begin(), ks.end(), r.k) == ks.end()) ks.push_back(r.k);
  }
  auto total = [](const std::vector<int>& k) { return std::accumulate(k.begin(), k.end(), 0); };
  const auto base_k = *std::min_element(ks.begin(), ks.end(),
                                        [&](const auto& a, const auto& b) { return total(a) < total(b); });
  for (auto n : ns) {
    for (const auto& metric : kDistanceNames) {
      auto med = [&](const std::vector<int>& k, int* count) {
        std::vector<double> v;
        for (const auto& r : res.records)
          if (r.ok && r.distances && r.n_obs == n && r.k == k) v.push_back(distance_value(*r.distances, metric));
        if (count) *count = static_cast<int>(v.size());
        return median(std::move(v));
      };
      const double base = med(base_k, nullptr);
      for (const auto& k : ks) {
        KSweepRow row;
        row.n_obs = n;
        row.k = k;
        row.metric = metric;
        row.median = med(k, &row.count);
        row.relative = base > 0.0 ? row.median / base : std::numeric_limits<double>::quiet_NaN();
        rows.push_back(row);
      }
    }
  }
  return rows;
}

inline void write_replicates_csv(std::ostream& os, const std::string& dataset, const ResamplingResult& res) {
  CsvWriter csv(os);
  std::vector<std::string> head{"dataset", "n_obs", "k", "replicate", "ok"};
  for (double a : kReportLevels) head.push_back("q_" + format_number(a));
  for (const auto& m : kDistanceNames) head.push_back(m);
  for (const char* c : {"ks_stat", "ks_pvalue", "lambda", "effective_dim", "converged", "outer_iters", "error"})
    head.emplace_back(c);
  csv.header(head);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (const auto& r : res.records) {
    csv.cell(dataset).cell(r.n_obs).cell(k_label(r.k)).cell(r.replicate).cell(r.ok);
    for (std::size_t a = 0; a < kReportLevels.size(); ++a) csv.cell(a < r.quantiles.size() ? r.quantiles[a] : nan);
    for (const auto& m : kDistanceNames) csv.cell(r.distances ? distance_value(*r.distances, m) : nan);
    csv.cell(r.distances && r.distances->ks_stat ? *r.distances->ks_stat : nan);
    csv.cell(r.distances && r.distances->ks_pvalue ? *r.distances->ks_pvalue : nan);
    csv.cell(r.lambda).cell(r.effective_dim).cell(r.converged).cell(r.outer_iters).cell(r.error);
    csv.end_row();
  }
}

/// One row per (N, k, alpha). `rmse_ratio` compares the RMSE
/// with the one at the smallest N for the same k and alpha; values >= 1 at
/// larger N flag an error that does not shrink with the sample size.
inline void write_quantile_table_csv(std::ostream& os, const std::string& dataset,
                                     const std::vector<QuantileRow>& rows,
                                     std::optional<double> reflection_point = std::nullopt) {
  CsvWriter csv(os);
  csv.header({"dataset", "n_obs", "k", "alpha", "truth", "mean", "bias", "std", "rmse", "count", "rmse_ratio",
              "reflection_point"});
  for (const auto& r : rows) {
    double base = std::numeric_limits<double>::quiet_NaN();
    std::int64_t n_min = std::numeric_limits<std::int64_t>::max();
    for (const auto& o : rows)
      if (o.k == r.k && o.alpha == r.alpha && o.n_obs < n_min) {
        n_min = o.n_obs;
        base = o.rmse;
      }
    csv.cell(dataset).cell(r.n_obs).cell(k_label(r.k)).cell(r.alpha).cell(r.truth).cell(r.mean).cell(r.bias);
    csv.cell(r.stdev).cell(r.rmse).cell(r.count).cell(r.rmse / base);
    if (reflection_point) csv.cell(*reflection_point);
    else csv.cell("");
    csv.end_row();
  }
}

inline void write_k_sweep_csv(std::ostream& os, const std::string& dataset, const std::vector<KSweepRow>& rows) {
  CsvWriter csv(os);
  csv.header({"dataset", "n_obs", "k", "metric", "median", "relative", "count"});
  for (const auto& r : rows)
    csv.cell(dataset).cell(r.n_obs).cell(k_label(r.k)).cell(r.metric).cell(r.median).cell(r.relative).cell(r.count).end_row();
}

/// Long format for box plots: one row per (replicate, metric).
inline void write_boxplot_csv(std::ostream& os, const std::string& dataset, const ResamplingResult& res) {
  CsvWriter csv(os);
  csv.header({"dataset", "n_obs", "k", "replicate", "metric", "value"});
  for (const auto& r : res.records) {
    if (!r.ok || !r.distances) continue;
    for (const auto& m : kDistanceNames)
      csv.cell(dataset).cell(r.n_obs).cell(k_label(r.k)).cell(r.replicate).cell(m).cell(distance_value(*r.distances, m)).end_row();
  }
}

struct Calibration {
  double reflection_point = 0.0;
  std::vector<double> residuals;  // model quantile - target, per level
  double rms = 0.0;
  bool failed = false;  // rms above 0.02: the model reading does not match the targets
};

/// Reflection point M of 0.2 Normal(1, 1/3) + 0.8 (M - Gamma(11, 1/6)) whose
/// quantiles at `levels` best match `targets` in least squares.
inline Calibration calibrate_reflection_point(std::span<const double> levels, std::span<const double> targets,
                                              double lo = 3.0, double hi = 8.0) {
  if (levels.size() != targets.size() || levels.empty())
    throw DomainError("calibrate_reflection_point: need one target per level");
  auto residuals = [&](double m) {
    const TruthModel t = make_truth("gaussrevgamma", m);
    std::vector<double> r;
    for (std::size_t i = 0; i < levels.size(); ++i) r.push_back(t.quantile(levels[i]) - targets[i]);
    return r;
  };
  auto sse = [&](double m) {
    double s = 0.0;
    for (double r : residuals(m)) s += r * r;
    return s;
  };
  std::uintmax_t iters = 200;
  const auto best = boost::math::tools::brent_find_minima(sse, lo, hi, 40, iters);
  Calibration c;
  c.reflection_point = best.first;
  c.residuals = residuals(best.first);
  double s = 0.0;
  for (double r : c.residuals) s += r * r;
  c.rms = std::sqrt(s / static_cast<double>(c.residuals.size()));
  c.failed = c.rms > 0.02;
  return c;
}

/// Target quantiles of the reversed-Gamma mixture at kReportLevels.
inline const std::vector<double> kGaussRevGammaTargets{3.643, 4.376, 4.530, 4.778, 4.857};

}  // namespace momentfit
