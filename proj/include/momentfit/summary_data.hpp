#pragma once

// Local-moment summaries: a histogram on a partition of the positive half-line
// with a few scaled raw moments per bin. This is the only data the estimator sees.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "momentfit/errors.hpp"

namespace momentfit {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Ordered bin edges b_0 < b_1 < ... < b_J. Bins are half-open [b_{j-1}, b_j);
/// only the last edge may be +infinity.
class BinPartition {
 public:
  explicit BinPartition(std::vector<double> edges) : edges_(std::move(edges)) {
    if (edges_.size() < 2) throw DomainError("BinPartition: need at least two edges");
    if (!(edges_.front() >= 0.0) || std::isinf(edges_.front()))
      throw DomainError("BinPartition: first edge must be finite and >= 0");
    for (std::size_t i = 1; i < edges_.size(); ++i) {
      if (std::isnan(edges_[i]) || !(edges_[i] > edges_[i - 1]))
        throw DomainError("BinPartition: edges must be strictly increasing");
      if (std::isinf(edges_[i]) && i + 1 != edges_.size())
        throw DomainError("BinPartition: only the last edge may be infinite");
    }
  }

  std::size_t size() const noexcept { return edges_.size() - 1; }
  double lower(std::size_t j) const { return edges_.at(j); }
  double upper(std::size_t j) const { return edges_.at(j + 1); }
  bool unbounded() const noexcept { return std::isinf(edges_.back()); }
  const std::vector<double>& edges() const noexcept { return edges_; }

  /// Largest finite edge.
  double last_finite_edge() const noexcept {
    return unbounded() ? edges_[edges_.size() - 2] : edges_.back();
  }

  /// Index of the bin containing x, if any.
  std::optional<std::size_t> locate(double x) const {
    if (!(x >= edges_.front()) || !(x < edges_.back())) return std::nullopt;
    auto it = std::upper_bound(edges_.begin(), edges_.end(), x);
    return static_cast<std::size_t>(std::distance(edges_.begin(), it) - 1);
  }

  friend bool operator==(const BinPartition&, const BinPartition&) = default;

 private:
  std::vector<double> edges_;
};

/// Observed local moments (pi_hat_j, mu_hat_{j,k}) with mu_hat in the scaled
/// convention mu_hat_{j,k} = N^-1 sum_i X_i^k 1{X_i in B_j}.
class LocalMomentSummary {
 public:
  LocalMomentSummary(BinPartition partition, std::int64_t n_obs, std::vector<double> pi_hat,
                     std::vector<std::vector<double>> mu_hat,
                     std::optional<std::vector<std::int64_t>> counts = std::nullopt)
      : partition_(std::move(partition)),
        n_obs_(n_obs),
        pi_hat_(std::move(pi_hat)),
        mu_hat_(std::move(mu_hat)),
        counts_(std::move(counts)) {
    validate();
  }

  /// Builds pi_hat_j = N_j / N from integer bin counts.
  static LocalMomentSummary from_counts(BinPartition partition, std::vector<std::int64_t> counts,
                                        std::vector<std::vector<double>> mu_hat) {
    std::int64_t total = 0;
    for (auto c : counts) {
      if (c < 0) throw DomainError("LocalMomentSummary: negative bin count");
      total += c;
    }
    if (total <= 0) throw DomainError("LocalMomentSummary: counts sum to zero");
    std::vector<double> pi(counts.size());
    for (std::size_t j = 0; j < counts.size(); ++j)
      pi[j] = static_cast<double>(counts[j]) / static_cast<double>(total);
    return LocalMomentSummary(std::move(partition), total, std::move(pi), std::move(mu_hat),
                              std::move(counts));
  }

  const BinPartition& partition() const noexcept { return partition_; }
  std::size_t bins() const noexcept { return partition_.size(); }
  std::int64_t n_obs() const noexcept { return n_obs_; }
  const std::vector<double>& pi_hat() const noexcept { return pi_hat_; }
  const std::vector<std::vector<double>>& mu_hat() const noexcept { return mu_hat_; }
  const std::optional<std::vector<std::int64_t>>& counts() const noexcept { return counts_; }

  /// Per-bin moment counts k_j.
  std::vector<int> k() const {
    std::vector<int> out(mu_hat_.size());
    for (std::size_t j = 0; j < mu_hat_.size(); ++j) out[j] = static_cast<int>(mu_hat_[j].size());
    return out;
  }

  std::size_t total_moments() const noexcept {
    std::size_t m = 0;
    for (const auto& row : mu_hat_) m += row.size();
    return m;
  }

 private:
  void validate() const {
    const std::size_t J = partition_.size();
    if (n_obs_ <= 0) throw DomainError("LocalMomentSummary: n_obs must be positive");
    if (pi_hat_.size() != J || mu_hat_.size() != J)
      throw DomainError("LocalMomentSummary: pi_hat/mu_hat length differs from bin count");
    double sum = 0.0;
    for (double p : pi_hat_) {
      if (!(p >= 0.0) || !std::isfinite(p))
        throw DomainError("LocalMomentSummary: proportions must be finite and >= 0");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-12) {
      std::ostringstream os;
      os.precision(17);
      os << "LocalMomentSummary: proportions sum to " << sum << ", expected 1";
      throw DomainError(os.str());
    }
    for (const auto& row : mu_hat_)
      for (double m : row)
        if (!(m >= 0.0) || !std::isfinite(m))
          throw DomainError("LocalMomentSummary: moments must be finite and >= 0");
    if (counts_ && counts_->size() != J)
      throw DomainError("LocalMomentSummary: counts length differs from bin count");
  }

  BinPartition partition_;
  std::int64_t n_obs_;
  std::vector<double> pi_hat_;
  std::vector<std::vector<double>> mu_hat_;
  std::optional<std::vector<std::int64_t>> counts_;
};

/// Empirical local moments of a raw sample on a partition. Counts are kept so
/// that pi_hat is exactly N_j / N.
inline LocalMomentSummary summarize_sample(std::span<const double> sample,
                                           const BinPartition& partition, std::span<const int> k) {
  if (sample.empty()) throw DomainError("summarize_sample: empty sample");
  const std::size_t J = partition.size();
  if (k.size() != J) throw DomainError("summarize_sample: k length differs from bin count");
  std::vector<std::int64_t> counts(J, 0);
  std::vector<std::vector<double>> sums(J);
  for (std::size_t j = 0; j < J; ++j) {
    if (k[j] < 0) throw DomainError("summarize_sample: negative moment count");
    sums[j].assign(static_cast<std::size_t>(k[j]), 0.0);
  }
  for (double x : sample) {
    auto j = partition.locate(x);
    if (!j) {
      std::ostringstream os;
      os.precision(17);
      os << "summarize_sample: value " << x << " lies outside the partition";
      throw DomainError(os.str());
    }
    ++counts[*j];
    double power = 1.0;
    for (auto& s : sums[*j]) {
      power *= x;
      s += power;
    }
  }
  const double n = static_cast<double>(sample.size());
  for (auto& row : sums)
    for (auto& s : row) s /= n;
  return LocalMomentSummary::from_counts(partition, std::move(counts), std::move(sums));
}

/// Partition whose interior edges sit at empirical quantiles of `sample`.
/// Level 0 maps to the origin and level 1 to +infinity, so the partition covers
/// the whole half-line. An interior level alpha maps to the order statistic
/// x_(floor(alpha N) + 1), which leaves exactly floor(alpha N) points below it.
inline BinPartition partition_at_levels(std::span<const double> sample,
                                        std::span<const double> levels) {
  if (sample.empty()) throw DomainError("partition_at_levels: empty sample");
  if (levels.size() < 2 || levels.front() != 0.0 || levels.back() != 1.0)
    throw DomainError("partition_at_levels: levels must start at 0 and end at 1");
  std::vector<double> sorted(sample.begin(), sample.end());
  std::sort(sorted.begin(), sorted.end());
  const auto n = sorted.size();
  std::vector<double> edges;
  edges.reserve(levels.size());
  edges.push_back(0.0);
  for (std::size_t i = 1; i + 1 < levels.size(); ++i) {
    const double a = levels[i];
    if (!(a > levels[i - 1]) || !(a < 1.0))
      throw DomainError("partition_at_levels: levels must be strictly increasing in [0, 1]");
    auto idx = static_cast<std::size_t>(std::floor(a * static_cast<double>(n) + 1e-9));
    idx = std::min(idx, n - 1);
    edges.push_back(sorted[idx]);
  }
  edges.push_back(kInf);
  return BinPartition(std::move(edges));
}

/// Appends a VaR/TVaR tail bin [var_value, inf) to a core summary describing
/// X conditionally on X < VaR. Core proportions and moments are rescaled by
/// var_level so that the result sums to one.
///
/// The core partition must either end exactly at var_value, or end with an
/// unbounded bin whose lower edge is below var_value (that bin is then closed
/// at var_value).
inline LocalMomentSummary from_var_tvar(const LocalMomentSummary& core, double var_level,
                                        double var_value, double tvar_value,
                                        std::int64_t n_obs) {
  if (!(var_level > 0.0) || !(var_level < 1.0))
    throw DomainError("from_var_tvar: var_level must lie in (0, 1)");
  if (!(tvar_value >= var_value))
    throw DomainError("from_var_tvar: TVaR must dominate VaR");
  if (n_obs <= 0) throw DomainError("from_var_tvar: n_obs must be positive");
  std::vector<double> edges = core.partition().edges();
  if (core.partition().unbounded()) {
    if (!(var_value > core.partition().last_finite_edge()))
      throw DomainError("from_var_tvar: VaR must exceed the last finite edge of the core");
    edges.back() = var_value;
  } else if (edges.back() != var_value) {
    throw DomainError("from_var_tvar: core partition must end at VaR");
  }
  edges.push_back(kInf);

  std::vector<double> pi;
  std::vector<std::vector<double>> mu;
  for (std::size_t j = 0; j < core.bins(); ++j) {
    pi.push_back(core.pi_hat()[j] * var_level);
    auto row = core.mu_hat()[j];
    for (auto& m : row) m *= var_level;
    mu.push_back(std::move(row));
  }
  const double tail = 1.0 - var_level;
  pi.push_back(tail);
  mu.push_back({tail * tvar_value});
  // Absorb the rounding residual into the largest bin so the total is exactly 1.
  double sum = 0.0;
  for (double p : pi) sum += p;
  auto big = std::max_element(pi.begin(), pi.end());
  *big += 1.0 - sum;
  return LocalMomentSummary(BinPartition(std::move(edges)), n_obs, std::move(pi), std::move(mu));
}

}  // namespace momentfit
