// momentfit: fit Erlang mixtures to local-moment summaries.
//
//   momentfit summarize --data raw.csv --levels 0,0.5,0.9,0.99,1 --k 4,4,4,1 --out dir
//   momentfit fit --input summary.json --out dir [--bands] [--qq raw.csv]
//   momentfit evaluate --input fit.json [--data raw.csv] [--truth lognormal] --out dir
//   momentfit reproduce --study lognormal-table --s 30 --out dir
//
// Exit codes: 0 ok, 2 invalid input or flags, 3 fit failure.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "momentfit/momentfit.hpp"

namespace fs = std::filesystem;
using namespace momentfit;

namespace {

constexpr int kExitInput = 2;
constexpr int kExitFit = 3;

struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct FitFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string input;
  std::string data;
  std::string out = ".";
  int n = 50;
  int order = 2;
  double a_lambda = 1.0;
  double b_lambda = 1e5;
  std::vector<double> levels{0.0, 0.5, 0.9, 0.99, 1.0};
  std::vector<int> k{4, 4, 4, 1};
  std::uint64_t seed = 20240101;
  int s = 30;
  unsigned jobs = 0;
  bool bands = false;
  std::string qq;
  bool verbatim_llh = false;
  std::string study;
  std::string truth;
  double level = 0.95;
};

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("momentfit");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::warn);
  if (const char* env = std::getenv("MOMENTFIT_LOG")) {
    const auto lvl = spdlog::level::from_str(env);
    if (lvl == spdlog::level::off && std::string(env) != "off")
      spdlog::warn("MOMENTFIT_LOG: unknown level '{}', keeping 'warn'", env);
    else
      spdlog::set_level(lvl);
  }
}

FitOptions fit_options(const Options& o) {
  FitOptions f;
  f.n = o.n;
  f.r = o.order;
  f.a_lambda = o.a_lambda;
  f.b_lambda = o.b_lambda;
  f.seed = o.seed;
  f.scale_by_n = !o.verbatim_llh;
  try {
    f.validate();
  } catch (const DomainError& e) {
    throw InputError(e.what());
  }
  return f;
}

std::vector<double> read_raw_values(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path);
  std::vector<double> xs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto last = line.find_last_not_of(" \t\r");
    const std::string tok = line.substr(first, last - first + 1);
    double x = 0.0;
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), x);
    if (ec != std::errc() || ptr != tok.data() + tok.size() || !std::isfinite(x))
      throw InputError(path + ":" + std::to_string(lineno) + ": not a finite number: '" + tok + "'");
    if (x < 0.0) throw InputError(path + ":" + std::to_string(lineno) + ": negative value " + tok);
    xs.push_back(x);
  }
  if (xs.empty()) throw InputError(path + ": no values");
  return xs;
}

fs::path prepare_out(const std::string& out) {
  fs::path p(out);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw InputError("cannot create output directory " + out + ": " + ec.message());
  return p;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + p.string());
  os << text;
}

template <class F>
std::string render(F&& f) {
  std::ostringstream os;
  f(os);
  return os.str();
}

int cmd_summarize(const Options& o) {
  const auto xs = read_raw_values(o.data);
  LocalMomentSummary summary = [&] {
    try {
      const BinPartition part = partition_at_levels(xs, o.levels);
      if (o.k.size() != part.size())
        throw InputError("--k needs " + std::to_string(part.size()) + " entries, got " + std::to_string(o.k.size()));
      return summarize_sample(xs, part, o.k);
    } catch (const DomainError& e) {
      throw InputError(e.what());
    }
  }();
  const auto dir = prepare_out(o.out);
  write_file(dir / "summary.json", summary_to_json(summary).dump(2) + "\n");
  std::cout << "bins " << summary.bins() << ", n_obs " << summary.n_obs() << ", pi_hat";
  for (double p : summary.pi_hat()) std::cout << ' ' << format_number(p);
  std::cout << "\n";
  return 0;
}

int cmd_fit(const Options& o) {
  const FitOptions fo = fit_options(o);
  LocalMomentSummary summary = [&] {
    try {
      return read_summary(o.input);
    } catch (const ParseError& e) {
      throw InputError(e.what());
    }
  }();
  std::vector<double> qq_sample;
  if (!o.qq.empty()) qq_sample = read_raw_values(o.qq);
  if (!(o.level >= 0.0 && o.level < 1.0)) throw InputError("--level must lie in [0, 1)");

  spdlog::info("fitting {} bins, n_obs {}, n {}, r {}", summary.bins(), summary.n_obs(), fo.n, fo.r);
  FitResult res;
  try {
    res = fit(summary, fo);
  } catch (const std::exception& e) {
    throw FitFailure(e.what());
  }
  for (const auto& st : res.objective_trace)
    spdlog::debug("outer: lambda {} total {} -> {}", st.lambda ? *st.lambda : 0.0, st.total_before, st.total_after);
  if (res.diagnostics.degenerate_information) spdlog::warn("summary carries no moment information; penalty-dominated fit");
  if (res.diagnostics.lambda_clamped) spdlog::warn("lambda hit its clamp {} time(s)", res.diagnostics.lambda_clamped);
  if (!res.converged) spdlog::warn("outer loop did not converge in {} iterations", res.outer_iters);

  std::string bands_csv, qbands_csv, qq_csv;
  if (o.bands) {
    const double hi = quantile(res.mixture, 0.999);
    std::vector<double> grid;
    for (int i = 0; i <= 200; ++i) grid.push_back(hi * i / 200.0);
    bands_csv = render([&](std::ostream& os) { write_band_csv(os, density_band(res, grid, o.level)); });
    std::vector<double> probs;
    for (int i = 1; i < 100; ++i) probs.push_back(i / 100.0);
    for (double p : {0.995, 0.999}) probs.push_back(p);
    qbands_csv = render([&](std::ostream& os) { write_band_csv(os, quantile_band(res, probs, o.level)); });
  }
  if (!qq_sample.empty()) {
    std::sort(qq_sample.begin(), qq_sample.end());
    qq_csv = render([&](std::ostream& os) {
      CsvWriter csv(os);
      csv.header({"p", "sample", "fitted"});
      const double m = static_cast<double>(qq_sample.size());
      for (std::size_t i = 0; i < qq_sample.size(); ++i) {
        const double p = (static_cast<double>(i) + 0.5) / m;
        csv.cell(p).cell(qq_sample[i]).cell(quantile(res.mixture, p)).end_row();
      }
    });
  }

  const auto dir = prepare_out(o.out);
  write_file(dir / "fit.json", fit_result_to_json(res).dump(2) + "\n");
  if (o.bands) {
    write_file(dir / "bands.csv", bands_csv);
    write_file(dir / "quantile_bands.csv", qbands_csv);
  }
  if (!qq_csv.empty()) write_file(dir / "qq.csv", qq_csv);
  std::cout << "lambda " << format_number(res.lambda) << "\n"
            << "effective_dim " << format_number(res.effective_dim) << "\n"
            << "converged " << (res.converged ? "true" : "false") << " after " << res.outer_iters << " outer iterations\n";
  return 0;
}

int cmd_evaluate(const Options& o) {
  ErlangMixture mix = [&] {
    try {
      return mixture_from_json(detail::read_json_file(o.input));
    } catch (const ParseError& e) {
      throw InputError(e.what());
    }
  }();
  std::vector<double> sample;
  if (!o.data.empty()) sample = read_raw_values(o.data);
  std::optional<TruthModel> truth;
  if (!o.truth.empty()) {
    try {
      truth = make_truth(o.truth);
    } catch (const DomainError& e) {
      throw InputError(e.what());
    }
  }

  Json doc;
  Json q;
  for (double a : kReportLevels) q[format_number(a)] = quantile(mix, a);
  doc["quantiles"] = q;
  Json risk = Json::array();
  for (double a : {0.9, 0.95, 0.99, 0.995}) {
    const auto vt = var_tvar(mix, a);
    risk.push_back({{"level", a}, {"var", vt.var}, {"tvar", vt.tvar}});
  }
  doc["var_tvar"] = risk;
  doc["mean"] = mean(mix);
  if (!sample.empty()) {
    std::sort(sample.begin(), sample.end());
    const auto ks = ks_test(sample, [&](double x) { return cdf(mix, x); });
    doc["ks"] = {{"n", sample.size()}, {"stat", ks.stat}, {"pvalue", ks.pvalue}};
  }
  if (truth) {
    const auto rep = distance_report(truth->distribution(), as_distribution(mix));
    doc["distances"] = {{"truth", o.truth},
                        {"l2_quantile", rep.l2_quantile},
                        {"l2_cdf", rep.l2_cdf},
                        {"l1_quantile", rep.l1_quantile},
                        {"kl", rep.kl},
                        {"kl_infinite", rep.kl_infinite},
                        {"quantile_cut", rep.quantile_cut}};
  }
  const auto dir = prepare_out(o.out);
  const std::string text = doc.dump(2) + "\n";
  write_file(dir / "evaluation.json", text);
  std::cout << text;
  return 0;
}

int cmd_reproduce(const Options& o) {
  ResamplingPlan plan;
  plan.fit = fit_options(o);
  plan.replicates = o.s;
  plan.jobs = o.jobs;
  plan.spec.seed = o.seed;
  std::string dataset = "lognormal";
  std::optional<Calibration> cal;
  const std::vector<std::int64_t> all_n{250, 500, 750, 1000, 2000};

  if (o.study == "lognormal-table" || o.study == "boxplots") {
    plan.n_grid = all_n;
  } else if (o.study == "gaussrevgamma-table") {
    dataset = "gaussrevgamma";
    cal = calibrate_reflection_point(kReportLevels, kGaussRevGammaTargets);
    if (cal->failed) spdlog::warn("reflection point calibration residual RMS {} exceeds 0.02", cal->rms);
    plan.spec.reflection_point = cal->reflection_point;
    plan.n_grid = {250, 500, 1000, 2000};
  } else if (o.study == "k-sweep") {
    plan.n_grid = {750};
    plan.k_grid = {{1, 1, 1, 1}, {2, 2, 2, 1}, {3, 3, 3, 1}, {4, 4, 4, 1}};
  } else {
    throw InputError("--study must be one of lognormal-table, gaussrevgamma-table, k-sweep, boxplots");
  }
  plan.spec.name = dataset;
  try {
    plan.validate();
  } catch (const DomainError& e) {
    throw InputError(e.what());
  }
  const auto dir = prepare_out(o.out);
  spdlog::info("study {}: {} cells", o.study, plan.n_grid.size() * plan.k_grid.size() * plan.replicates);
  const ResamplingResult res = run_resampling(plan);
  for (const auto& r : res.records)
    if (!r.ok) spdlog::warn("replicate N={} k={} #{} failed: {}", r.n_obs, k_label(r.k), r.replicate, r.error);

  const TruthModel truth = plan.spec.truth();
  write_file(dir / "replicates.csv", render([&](std::ostream& os) { write_replicates_csv(os, dataset, res); }));
  if (o.study == "k-sweep") {
    write_file(dir / "k_sweep.csv", render([&](std::ostream& os) { write_k_sweep_csv(os, dataset, k_sweep_table(res)); }));
  } else if (o.study == "boxplots") {
    write_file(dir / "boxplot_data.csv", render([&](std::ostream& os) { write_boxplot_csv(os, dataset, res); }));
  } else {
    const auto rows = quantile_table(res, truth);
    std::optional<double> m;
    if (cal) m = cal->reflection_point;
    write_file(dir / "quantile_table.csv", render([&](std::ostream& os) { write_quantile_table_csv(os, dataset, rows, m); }));
    write_file(dir / "boxplot_data.csv", render([&](std::ostream& os) { write_boxplot_csv(os, dataset, res); }));
  }
  if (cal) {
    std::cout << "reflection_point " << format_number(cal->reflection_point) << " residual_rms "
              << format_number(cal->rms) << "\n";
  }
  const std::size_t total = res.records.size();
  std::cout << "replicates " << total << ", failed " << res.failures << ", wall-clock "
            << format_number(std::round(res.seconds * 100.0) / 100.0) << " s\n";
  if (static_cast<double>(res.failures) > 0.1 * static_cast<double>(total)) {
    spdlog::error("more than 10% of replicates failed");
    return kExitFit;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"Penalized Erlang-mixture density estimation from local moments"};
  app.require_subcommand(1);
  Options o;

  auto add_fit_flags = [&](CLI::App* c) {
    c->add_option("--n", o.n, "number of mixture components")->check(CLI::PositiveNumber);
    c->add_option("--order", o.order, "difference penalty order r")->check(CLI::PositiveNumber);
    c->add_option("--a-lambda", o.a_lambda, "Gamma prior shape for lambda")->check(CLI::PositiveNumber);
    c->add_option("--b-lambda", o.b_lambda, "Gamma prior scale for lambda")->check(CLI::PositiveNumber);
    c->add_option("--seed", o.seed, "random seed");
    auto* sb = c->add_flag("--scale-by-n", "scale the data term by N (default)");
    auto* vb = c->add_flag("--verbatim-llh", o.verbatim_llh, "use the unscaled loglikelihood");
    sb->excludes(vb);
  };

  auto* summarize = app.add_subcommand("summarize", "local moments of a raw sample");
  summarize->add_option("--data", o.data, "raw data, one value per line")->required();
  summarize->add_option("--levels", o.levels, "partition quantile levels")->delimiter(',');
  summarize->add_option("--k", o.k, "moments per bin")->delimiter(',');
  summarize->add_option("--out", o.out, "output directory");

  auto* fitc = app.add_subcommand("fit", "fit a summary");
  fitc->add_option("--input", o.input, "summary JSON")->required();
  fitc->add_option("--out", o.out, "output directory");
  fitc->add_flag("--bands", o.bands, "write pointwise density and quantile bands");
  fitc->add_option("--level", o.level, "band confidence level");
  fitc->add_option("--qq", o.qq, "reference sample for a QQ table");
  add_fit_flags(fitc);

  auto* evaluate = app.add_subcommand("evaluate", "quantiles, VaR/TVaR, KS and distances of a fitted mixture");
  evaluate->add_option("--input", o.input, "fit or mixture JSON")->required();
  evaluate->add_option("--data", o.data, "raw sample for a KS test");
  evaluate->add_option("--truth", o.truth, "reference model: lognormal, mixgamma, gaussrevgamma, mixnormalbeta");
  evaluate->add_option("--out", o.out, "output directory");

  auto* reproduce = app.add_subcommand("reproduce", "simulation studies");
  reproduce->add_option("--study", o.study, "lognormal-table, gaussrevgamma-table, k-sweep or boxplots")->required();
  reproduce->add_option("--s", o.s, "replicates per setting")->check(CLI::Range(2, 100000));
  reproduce->add_option("--jobs", o.jobs, "worker threads (0 = all cores)");
  reproduce->add_option("--out", o.out, "output directory");
  add_fit_flags(reproduce);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitInput;
  }

  try {
    if (*summarize) return cmd_summarize(o);
    if (*fitc) return cmd_fit(o);
    if (*evaluate) return cmd_evaluate(o);
    if (*reproduce) return cmd_reproduce(o);
  } catch (const InputError& e) {
    spdlog::error("{}", e.what());
    return kExitInput;
  } catch (const FitFailure& e) {
    spdlog::error("fit failed: {}", e.what());
    return kExitFit;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitFit;
  }
  return kExitInput;
}
