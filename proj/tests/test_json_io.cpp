#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <string>

#include "test_support.hpp"

#ifndef MOMENTFIT_DATA_DIR
#define MOMENTFIT_DATA_DIR "data"
#endif

using namespace momentfit;

namespace {

Json table1_doc() {
  return Json::parse(R"({
    "n_obs": 750,
    "bins": [
      {"lower": 0.0,   "upper": 0.948, "count": 375, "moments": [0.332, 0.235, 0.175, 0.136]},
      {"lower": 0.948, "upper": 1.885, "count": 300, "moments": [0.526, 0.719, 1.017, 1.488]},
      {"lower": 1.885, "upper": 3.332, "count": 67,  "moments": [0.206, 0.485, 1.167, 2.874]},
      {"lower": 3.332, "upper": null,  "count": 8,   "moments": [0.048]}
    ]})");
}

std::string parse_error_path(const Json& doc) {
  try {
    summary_from_json(doc);
  } catch (const ParseError& e) {
    return e.path();
  }
  return "<no error>";
}

}  // namespace

TEST(SummaryJson, Table1MatchesInMemory) {
  const auto s = summary_from_json(table1_doc());
  const auto want = testsupport::table1();
  EXPECT_EQ(s.n_obs(), 750);
  EXPECT_EQ(s.partition().edges(), want.partition().edges());
  EXPECT_EQ(s.pi_hat(), want.pi_hat());
  EXPECT_EQ(s.mu_hat(), want.mu_hat());
  EXPECT_TRUE(std::isinf(s.partition().upper(3)));
}

TEST(SummaryJson, ShippedFileParses) {
  const auto path = std::filesystem::path(MOMENTFIT_DATA_DIR) / "table1.json";
  ASSERT_TRUE(std::filesystem::exists(path)) << path;
  const auto s = read_summary(path.string());
  EXPECT_EQ(s.mu_hat(), testsupport::table1().mu_hat());
}

TEST(SummaryJson, ErrorsCarryPaths) {
  auto doc = table1_doc();
  doc["bins"][1]["upper"] = nullptr;
  EXPECT_EQ(parse_error_path(doc), "bins[1].upper");

  doc = table1_doc();
  doc["bins"][2].erase("moments");
  EXPECT_EQ(parse_error_path(doc), "bins[2].moments");

  doc = table1_doc();
  doc["bins"][0]["moments"][1] = "x";
  EXPECT_EQ(parse_error_path(doc), "bins[0].moments[1]");

  doc = table1_doc();
  doc["bins"][2]["lower"] = 1.9;
  EXPECT_EQ(parse_error_path(doc), "bins[2].lower");

  doc = table1_doc();
  doc["bins"][3]["count"] = 9;
  EXPECT_EQ(parse_error_path(doc), "bins");

  doc = table1_doc();
  doc["bins"][0]["pi"] = 0.5;
  EXPECT_EQ(parse_error_path(doc), "bins[0]");

  doc = table1_doc();
  doc.erase("n_obs");
  EXPECT_EQ(parse_error_path(doc), "n_obs");

  doc = table1_doc();
  doc["n_obs"] = 750.5;
  EXPECT_EQ(parse_error_path(doc), "n_obs");

  EXPECT_EQ(parse_error_path(Json::array()), "");
}

TEST(SummaryJson, PiForm) {
  const auto s = summary_from_json(Json::parse(R"({"n_obs": 10, "bins": [
      {"lower": 0, "upper": 1, "pi": 0.25, "moments": [0.5]},
      {"lower": 1, "upper": null, "pi": 0.75, "moments": []}]})"));
  EXPECT_FALSE(s.counts().has_value());
  EXPECT_EQ(s.pi_hat()[1], 0.75);
}

TEST(SummaryJson, RoundTrip) {
  testsupport::Gen g(1);
  for (int trial = 0; trial < 20; ++trial) {
    const auto mix = g.mixture(10);
    const auto part = g.partition(g.integer(1, 5), 3.0 * mix.scale() * mix.size());
    std::vector<int> k(part.size());
    for (auto& kj : k) kj = g.integer(0, 4);
    const auto s = testsupport::exact_summary(mix, part, k, g.integer(10, 100000));
    const auto back = summary_from_json(Json::parse(summary_to_json(s).dump()));
    EXPECT_EQ(back.partition().edges(), s.partition().edges());
    EXPECT_EQ(back.pi_hat(), s.pi_hat());
    EXPECT_EQ(back.mu_hat(), s.mu_hat());
    EXPECT_EQ(back.n_obs(), s.n_obs());
  }
  const auto t1 = testsupport::table1();
  const auto back = summary_from_json(summary_to_json(t1));
  ASSERT_TRUE(back.counts().has_value());
  EXPECT_EQ(*back.counts(), *t1.counts());
}

TEST(SummaryJson, FileRoundTripAndMalformed) {
  const auto dir = std::filesystem::temp_directory_path() / "momentfit_json_test";
  std::filesystem::create_directories(dir);
  const auto file = (dir / "s.json").string();
  write_summary(testsupport::table1(), file);
  EXPECT_EQ(read_summary(file).mu_hat(), testsupport::table1().mu_hat());
  detail::write_text_file(file, "{\"n_obs\": 3, \"bins\": [");
  EXPECT_THROW(read_summary(file), ParseError);
  EXPECT_THROW(read_summary((dir / "missing.json").string()), ParseError);
  std::filesystem::remove_all(dir);
}

TEST(MixtureJson, RoundTripAndValidation) {
  const ErlangMixture m({0.25, 0.5, 0.25}, 0.7);
  const auto back = mixture_from_json(Json::parse(mixture_to_json(m).dump()));
  EXPECT_EQ(back, m);
  EXPECT_THROW(mixture_from_json(Json::parse(R"({"theta": -1, "weights": [1]})")), ParseError);
  EXPECT_THROW(mixture_from_json(Json::parse(R"({"theta": 1, "weights": []})")), ParseError);
  EXPECT_THROW(mixture_from_json(Json::parse(R"({"theta": 1, "weights": [0.5, -0.1]})")), ParseError);
  // unnormalized input is rescaled
  const auto norm = mixture_from_json(Json::parse(R"({"theta": 2, "weights": [1, 3]})"));
  EXPECT_DOUBLE_EQ(norm.weights()[1], 0.75);
}

TEST(FitJson, CarriesTraceAndOptionalHessian) {
  FitOptions o;
  o.n = 10;
  const auto r = fit(testsupport::table1(), o);
  const auto doc = fit_result_to_json(r);
  EXPECT_EQ(doc["weights"].size(), 10u);
  EXPECT_FALSE(doc.contains("hessian"));
  EXPECT_TRUE(doc["diagnostics"]["trace"][0]["lambda"].is_null());
  EXPECT_EQ(doc["diagnostics"]["trace"].size(), r.objective_trace.size());
  const auto with_h = fit_result_to_json(r, true);
  EXPECT_EQ(with_h["hessian"].size(), 11u);
  const auto m = mixture_from_json(doc);
  EXPECT_EQ(m.weights(), r.mixture.weights());
}

TEST(Csv, NumberFormatRoundTrips) {
  testsupport::Gen g(2);
  for (int i = 0; i < 1000; ++i) {
    const double x = g.log_uniform(1e-300, 1e300) * (g.uniform(0, 1) < 0.5 ? -1 : 1);
    EXPECT_EQ(std::stod(format_number(x)), x);
  }
  EXPECT_EQ(format_number(0.1), "0.1");
  EXPECT_EQ(format_number(750.0), "750");
  EXPECT_EQ(format_number(kInf), "inf");
  EXPECT_EQ(format_number(std::nan("")), "nan");
}

TEST(Csv, FieldQuoting) {
  EXPECT_EQ(csv_field("plain"), "plain");
  EXPECT_EQ(csv_field("a,b"), "\"a,b\"");
  EXPECT_EQ(csv_field("say \"hi\""), "\"say \"\"hi\"\"\"");
}
