#pragma once

// JSON files for summaries, mixtures and fit results.
//
//   summary: { "n_obs": int, "bins": [ { "lower", "upper" (null = +inf), "count" | "pi", "moments": [...] } ] }
//   mixture: { "theta": number, "weights": [...] }

#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "momentfit/erlang_mixture.hpp"
#include "momentfit/errors.hpp"
#include "momentfit/fitter.hpp"
#include "momentfit/summary_data.hpp"

namespace momentfit {

using Json = nlohmann::ordered_json;

namespace detail {

inline std::string join_path(const std::string& base, const std::string& key) {
  return base.empty() ? key : base + "." + key;
}

inline std::string index_path(const std::string& base, std::size_t i) {
  return base + "[" + std::to_string(i) + "]";
}

inline const Json& require(const Json& obj, const std::string& key, const std::string& base) {
  if (!obj.is_object()) throw ParseError(base, "expected an object");
  auto it = obj.find(key);
  if (it == obj.end()) throw ParseError(join_path(base, key), "missing field");
  return *it;
}

inline double as_number(const Json& v, const std::string& path) {
  if (!v.is_number()) throw ParseError(path, "expected a number");
  const double x = v.get<double>();
  if (!std::isfinite(x)) throw ParseError(path, "expected a finite number");
  return x;
}

inline std::int64_t as_integer(const Json& v, const std::string& path) {
  if (v.is_number_integer()) return v.get<std::int64_t>();
  if (v.is_number_float()) {
    const double x = v.get<double>();
    if (std::isfinite(x) && x == std::floor(x) && std::abs(x) < 9e15) return static_cast<std::int64_t>(x);
  }
  throw ParseError(path, "expected an integer");
}

inline std::vector<double> as_number_array(const Json& v, const std::string& path) {
  if (!v.is_array()) throw ParseError(path, "expected an array");
  std::vector<double> out;
  out.reserve(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out.push_back(as_number(v[i], index_path(path, i)));
  return out;
}

inline Json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("", "cannot open " + path);
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("", std::string("malformed JSON: ") + e.what());
  }
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace detail

inline LocalMomentSummary summary_from_json(const Json& doc) {
  if (!doc.is_object()) throw ParseError("", "expected an object");
  const std::int64_t n_obs = detail::as_integer(detail::require(doc, "n_obs", ""), "n_obs");
  if (n_obs <= 0) throw ParseError("n_obs", "must be positive");
  const Json& bins = detail::require(doc, "bins", "");
  if (!bins.is_array() || bins.empty()) throw ParseError("bins", "expected a nonempty array");

  std::vector<double> edges;
  std::vector<std::vector<double>> moments;
  std::vector<std::int64_t> counts;
  std::vector<double> pi;
  bool use_counts = false;
  for (std::size_t j = 0; j < bins.size(); ++j) {
    const std::string base = detail::index_path("bins", j);
    const Json& bin = bins[j];
    if (!bin.is_object()) throw ParseError(base, "expected an object");
    const double lower = detail::as_number(detail::require(bin, "lower", base), base + ".lower");
    const Json& up = detail::require(bin, "upper", base);
    double upper = kInf;
    if (up.is_null()) {
      if (j + 1 != bins.size()) throw ParseError(base + ".upper", "null (infinite) upper edge only allowed on the last bin");
    } else {
      upper = detail::as_number(up, base + ".upper");
    }
    if (j == 0) {
      if (lower < 0.0) throw ParseError(base + ".lower", "must be >= 0");
      edges.push_back(lower);
    } else if (lower != edges.back()) {
      throw ParseError(base + ".lower", "must equal the previous bin's upper edge");
    }
    if (!(upper > lower)) throw ParseError(base + ".upper", "edges must be strictly increasing");
    edges.push_back(upper);

    const bool has_count = bin.contains("count");
    const bool has_pi = bin.contains("pi");
    if (has_count == has_pi) throw ParseError(base, "exactly one of \"count\" or \"pi\" is required");
    if (j == 0) use_counts = has_count;
    else if (use_counts != has_count) throw ParseError(base, "mixing \"count\" and \"pi\" across bins");
    if (has_count) {
      const auto c = detail::as_integer(bin["count"], base + ".count");
      if (c < 0) throw ParseError(base + ".count", "must be >= 0");
      counts.push_back(c);
    } else {
      const double p = detail::as_number(bin["pi"], base + ".pi");
      if (p < 0.0 || p > 1.0) throw ParseError(base + ".pi", "must lie in [0, 1]");
      pi.push_back(p);
    }
    auto m = detail::as_number_array(detail::require(bin, "moments", base), base + ".moments");
    for (std::size_t k = 0; k < m.size(); ++k)
      if (m[k] < 0.0) throw ParseError(detail::index_path(base + ".moments", k), "moments must be >= 0");
    moments.push_back(std::move(m));
  }

  if (use_counts) {
    std::int64_t total = 0;
    for (auto c : counts) total += c;
    if (total != n_obs) throw ParseError("bins", "counts sum to " + std::to_string(total) + ", n_obs is " + std::to_string(n_obs));
    pi.resize(counts.size());
    for (std::size_t j = 0; j < counts.size(); ++j)
      pi[j] = static_cast<double>(counts[j]) / static_cast<double>(n_obs);
  }
  try {
    return LocalMomentSummary(BinPartition(std::move(edges)), n_obs, std::move(pi), std::move(moments),
                              use_counts ? std::optional(std::move(counts)) : std::nullopt);
  } catch (const DomainError& e) {
    throw ParseError("bins", e.what());
  }
}

inline Json summary_to_json(const LocalMomentSummary& s) {
  Json doc;
  doc["n_obs"] = s.n_obs();
  Json bins = Json::array();
  const auto& part = s.partition();
  for (std::size_t j = 0; j < s.bins(); ++j) {
    Json bin;
    bin["lower"] = part.lower(j);
    if (std::isinf(part.upper(j))) bin["upper"] = nullptr;
    else bin["upper"] = part.upper(j);
    if (s.counts()) bin["count"] = (*s.counts())[j];
    else bin["pi"] = s.pi_hat()[j];
    bin["moments"] = s.mu_hat()[j];
    bins.push_back(std::move(bin));
  }
  doc["bins"] = std::move(bins);
  return doc;
}

inline LocalMomentSummary read_summary(const std::string& path) {
  return summary_from_json(detail::read_json_file(path));
}

inline void write_summary(const LocalMomentSummary& s, const std::string& path) {
  detail::write_text_file(path, summary_to_json(s).dump(2) + "\n");
}

inline ErlangMixture mixture_from_json(const Json& doc) {
  const double theta = detail::as_number(detail::require(doc, "theta", ""), "theta");
  if (!(theta > 0.0)) throw ParseError("theta", "must be positive");
  auto w = detail::as_number_array(detail::require(doc, "weights", ""), "weights");
  if (w.empty()) throw ParseError("weights", "must be nonempty");
  for (std::size_t i = 0; i < w.size(); ++i)
    if (w[i] < 0.0) throw ParseError(detail::index_path("weights", i), "must be >= 0");
  try {
    return ErlangMixture::normalized(std::move(w), theta);
  } catch (const DomainError& e) {
    throw ParseError("weights", e.what());
  }
}

inline Json mixture_to_json(const ErlangMixture& mix) {
  Json doc;
  doc["theta"] = mix.scale();
  doc["weights"] = mix.weights();
  return doc;
}

inline Json fit_result_to_json(const FitResult& fit, bool include_hessian = false) {
  Json doc;
  doc["theta"] = fit.mixture.scale();
  doc["weights"] = fit.mixture.weights();
  doc["lambda"] = fit.lambda;
  doc["effective_dim"] = fit.effective_dim;
  doc["converged"] = fit.converged;
  doc["outer_iters"] = fit.outer_iters;
  Json diag;
  diag["lambda_clamped"] = fit.diagnostics.lambda_clamped;
  diag["hessian_projected"] = fit.diagnostics.hessian_projected;
  diag["tau_clipped"] = fit.diagnostics.tau_clipped;
  diag["hessian_jitter"] = fit.diagnostics.hessian_jitter;
  diag["inner_not_converged"] = fit.diagnostics.inner_not_converged;
  diag["degenerate_information"] = fit.diagnostics.degenerate_information;
  diag["n_obs"] = fit.n_obs;
  diag["scale_by_n"] = fit.scale_by_n;
  diag["order"] = fit.penalty.order;
  Json trace = Json::array();
  for (const auto& st : fit.objective_trace) {
    Json row;
    if (st.lambda) row["lambda"] = *st.lambda;
    else row["lambda"] = nullptr;
    row["total_before"] = st.total_before;
    row["total_after"] = st.total_after;
    row["inner_iterations"] = st.inner_iterations;
    trace.push_back(std::move(row));
  }
  diag["trace"] = std::move(trace);
  doc["diagnostics"] = std::move(diag);
  if (include_hessian) {
    Json rows = Json::array();
    for (Eigen::Index i = 0; i < fit.hessian.H.rows(); ++i) {
      std::vector<double> r(static_cast<std::size_t>(fit.hessian.H.cols()));
      for (Eigen::Index c = 0; c < fit.hessian.H.cols(); ++c) r[static_cast<std::size_t>(c)] = fit.hessian.H(i, c);
      rows.push_back(std::move(r));
    }
    doc["hessian"] = std::move(rows);
  }
  return doc;
}

}  // namespace momentfit
