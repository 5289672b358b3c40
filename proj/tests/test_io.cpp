#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "compop/error.hpp"
#include "compop/io.hpp"

using namespace compop;

namespace {

const char* kDesign = R"({
  "subsets": [{"label": "A", "prevalence": 0.25}, {"label": "B", "prevalence": 0.75, "weight": 2}],
  "composites": [["A"], ["B", "A"]],
  "n_covariates": 2,
  "alpha": 0.05
})";

std::vector<SubjectRecord> read_csv(const std::string& text, int d) {
  std::istringstream in(text);
  return read_dataset_csv(in, d);
}

}  // namespace

TEST(DesignJson, ParsesAndRoundTrips) {
  const DesignSpec spec = design_from_json(Json::parse(kDesign));
  EXPECT_EQ(spec.n_subsets(), 2u);
  EXPECT_EQ(spec.composites[1], (IndexSet{0, 1}));
  EXPECT_EQ(spec.n_covariates, 2);
  EXPECT_EQ(spec.alpha, 0.05);
  EXPECT_EQ(spec.target_power, 0.9);
  EXPECT_EQ(spec.weights(), (std::vector<double>{0.25, 2.0}));

  const DesignSpec again = design_from_json(to_json(spec));
  EXPECT_EQ(again.composites, spec.composites);
  EXPECT_EQ(again.weights(), spec.weights());
  EXPECT_EQ(again.prevalences(), spec.prevalences());
  EXPECT_EQ(again.kappa, spec.kappa);
}

TEST(DesignJson, Errors) {
  Json j = Json::parse(kDesign);
  j["composites"].push_back(Json::array({"Z"}));
  EXPECT_THROW(design_from_json(j), ValidationError);
  j = Json::parse(kDesign);
  j["subsets"][0]["prevalence"] = "quarter";
  EXPECT_THROW(design_from_json(j), Error);
  j = Json::parse(kDesign);
  j.erase("subsets");
  EXPECT_THROW(design_from_json(j), Error);
  j = Json::parse(kDesign);
  j["subsets"][1]["prevalence"] = 0.5;
  EXPECT_THROW(design_from_json(j), ValidationError);
}

TEST(AssumptionsJson, RhoOrItsSquare) {
  const DesignSpec spec = design_from_json(Json::parse(kDesign));
  const auto a = assumptions_from_json(
      Json::parse(R"({"A": {"effect": 1, "rho": 0.4}, "B": {"effect": 0, "variance": 2, "rho_squared": 0.25}})"), spec);
  EXPECT_NEAR(a[0].rho_squared, 0.16, 1e-15);
  EXPECT_EQ(a[0].variance, 1.0);
  EXPECT_EQ(a[1].rho_squared, 0.25);
  EXPECT_EQ(a[1].variance, 2.0);

  const auto back = assumptions_from_json(assumptions_to_json(spec, a), spec);
  EXPECT_EQ(back[0].rho_squared, a[0].rho_squared);
  EXPECT_EQ(back[1].effect, a[1].effect);

  EXPECT_THROW(assumptions_from_json(Json::parse(R"({"A": {"effect": 1, "rho": 0.4, "rho_squared": 0.16},
                                                     "B": {"effect": 0}})"),
                                     spec),
               ParseError);
  EXPECT_THROW(assumptions_from_json(Json::parse(R"({"A": {"effect": 1}})"), spec), ValidationError);
  EXPECT_THROW(assumptions_from_json(Json::parse(R"({"A": {"effect": 1}, "B": {"effect": 0}, "C": {"effect": 0}})"),
                                     spec),
               ValidationError);
}

TEST(ScenarioJson, DefaultsAreMerged) {
  const Json j = Json::parse(R"({
    "defaults": {
      "runs": 300, "seed": 5,
      "design": {"subsets": [{"label": "S1", "prevalence": 0.5}, {"label": "S2", "prevalence": 0.5}],
                 "composites": [["S1"], ["S1", "S2"]], "n_covariates": 1},
      "assumed": {"S1": {"effect": 1, "rho": 0.4}, "S2": {"effect": 0, "rho": 0.4}},
      "sigma_a": {"runs": 3000, "per_run_n": 1000, "seed": 8},
      "recalc_sigma_a": {"runs": 1500}
    },
    "scenarios": [
      {"name": "a"},
      {"name": "b", "nu": 0.3, "rule": "restricted", "runs": 500,
       "truth": {"S1": {"effect": 0.5, "variance": 2, "rho": 0.4}, "S2": {"effect": 0, "rho": 0.4}}}
    ]
  })");
  const auto s = scenarios_from_json(j);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s[0].runs, 300);
  EXPECT_EQ(s[0].seed, 5u);
  EXPECT_EQ(s[0].truth[0].effect, 1.0);  // truth defaults to the assumptions
  EXPECT_EQ(s[0].nu, 0.0);
  EXPECT_EQ(s[1].runs, 500);
  EXPECT_EQ(s[1].rule, Rule::kRestricted);
  EXPECT_EQ(s[1].truth[0].variance, 2.0);
  EXPECT_EQ(s[1].planning.sigma_a.runs, 3000);
  EXPECT_EQ(s[1].recalc_sigma_a.runs, 1500);
  EXPECT_EQ(s[1].recalc_sigma_a.per_run_n, 1000);
  EXPECT_EQ(s[1].recalc_sigma_a.seed, 8u);

  const auto again = scenarios_from_json(Json{{"scenarios", Json::array({to_json(s[1])})}});
  EXPECT_EQ(again[0].nu, s[1].nu);
  EXPECT_EQ(again[0].truth[0].variance, s[1].truth[0].variance);
  EXPECT_EQ(again[0].recalc_sigma_a.runs, s[1].recalc_sigma_a.runs);
}

TEST(ScenarioJson, Errors) {
  Json j = read_json_file(COMPOP_CONFIGS_DIR "/scenarios_smoke.json");
  EXPECT_EQ(scenarios_from_json(j).size(), 2u);
  j["scenarios"][1]["name"] = "null_fixed";
  EXPECT_THROW(scenarios_from_json(j), ValidationError);
  j = read_json_file(COMPOP_CONFIGS_DIR "/scenarios_smoke.json");
  j["scenarios"][0]["rule"] = "sometimes";
  EXPECT_THROW(scenarios_from_json(j), ValidationError);
  EXPECT_THROW(read_json_file(COMPOP_CONFIGS_DIR "/no_such_file.json"), ParseError);
}

TEST(DatasetCsv, ReadsArmsAndBlindedRows) {
  const auto r = read_csv("# comment\nsubset,arm,y,x1\nS1,T,1.5,0.25\n\nS2,C,-2,1e-3\nS1,,3,4\n", 1);
  ASSERT_EQ(r.size(), 3u);
  EXPECT_EQ(r[0].subset, "S1");
  EXPECT_EQ(r[0].arm, Arm::kTreated);
  EXPECT_EQ(r[1].arm, Arm::kControl);
  EXPECT_FALSE(r[2].arm.has_value());
  EXPECT_EQ(r[1].x, (std::vector<double>{1e-3}));

  const auto blinded = read_csv("y,x2,x1,subset\n1,2,3,S1\n", 2);
  EXPECT_EQ(blinded[0].x, (std::vector<double>{3.0, 2.0}));
  EXPECT_FALSE(blinded[0].arm.has_value());
}

TEST(DatasetCsv, Errors) {
  EXPECT_THROW(read_csv("subset,arm,y\nS1,T,1\n", 1), ParseError);         // missing x1
  EXPECT_THROW(read_csv("subset,arm,x1\nS1,T,1\n", 1), ParseError);        // missing y
  EXPECT_THROW(read_csv("subset,arm,y,x1\nS1,T,abc,1\n", 1), ParseError);  // bad number
  EXPECT_THROW(read_csv("subset,arm,y,x1\nS1,X,1,1\n", 1), ParseError);    // bad arm
  EXPECT_THROW(read_csv("subset,arm,y,x1\nS1,T,1\n", 1), ParseError);      // short row
  EXPECT_THROW(read_csv("", 1), ParseError);
  EXPECT_THROW(read_dataset_csv_file("/nonexistent/data.csv", 1), ParseError);
}

TEST(DatasetCsv, WriteReadRoundTrip) {
  std::mt19937_64 gen(1);
  std::normal_distribution<double> normal;
  std::vector<SubjectRecord> records;
  for (int i = 0; i < 50; ++i)
    records.push_back({i % 2 ? "S1" : "S2", i % 3 ? Arm::kTreated : Arm::kControl, normal(gen) * 1e3,
                       {normal(gen), normal(gen) * 1e-7}});
  std::stringstream buf;
  write_dataset_csv(buf, records, 2, true);
  const auto back = read_dataset_csv(buf, 2);
  ASSERT_EQ(back.size(), records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    EXPECT_EQ(back[i].subset, records[i].subset);
    EXPECT_EQ(back[i].arm, records[i].arm);
    EXPECT_EQ(back[i].y, records[i].y);
    EXPECT_EQ(back[i].x, records[i].x);
  }
}

TEST(Formatting, FullPrecisionRoundTrips) {
  std::mt19937_64 gen(2);
  std::uniform_real_distribution<double> u(-30.0, 30.0);
  for (int i = 0; i < 1000; ++i) {
    const double v = std::exp(u(gen)) * (i % 2 ? -1.0 : 1.0);
    EXPECT_EQ(std::stod(format_full(v)), v);
  }
  EXPECT_EQ(format_full(0.1), "0.1");
  EXPECT_EQ(format_sig(2.238964, 4), "2.239");
}

TEST(SummaryCsv, ConfigLineAndColumns) {
  ScenarioResult ok;
  ok.name = "s";
  SimulationSummary s;
  s.scenario = "s";
  s.runs = 100;
  s.n0 = 80;
  s.elementary_rate = {0.5, 0.25};
  s.power = Proportion{0.5, 0.05, 0.4, 0.6};
  ok.summary = s;
  ScenarioResult bad;
  bad.name = "t";
  bad.error = "broken, badly";
  std::ostringstream out;
  write_summary_csv(out, {ok, bad}, Json{{"runs", 100}});
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line.rfind("# config ", 0), 0u);
  EXPECT_EQ(Json::parse(line.substr(9))["runs"], 100);
  std::getline(in, line);
  EXPECT_EQ(line.rfind("scenario,status,error,runs", 0), 0u);
  EXPECT_NE(line.find("reject_2"), std::string::npos);
  std::getline(in, line);
  EXPECT_EQ(line.rfind("s,ok,", 0), 0u);
  std::getline(in, line);
  EXPECT_EQ(line.rfind("t,error,", 0), 0u);
  EXPECT_NE(line.find("broken"), std::string::npos);
}
