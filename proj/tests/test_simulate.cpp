#include <gtest/gtest.h>

#include <cmath>

#include "compop/error.hpp"
#include "compop/simulate.hpp"
#include "oracles.hpp"

using namespace compop;

namespace {

ScenarioConfig small_scenario(double nu, double true_effect = 1.0) {
  ScenarioConfig c;
  c.name = "small";
  DesignSpec s;
  s.subsets = {{"S1", 0.5, {}}, {"S2", 0.5, {}}};
  s.composites = {{0}, {0, 1}};
  s.n_covariates = 1;
  c.design = validate(s);
  c.assumed = {{1.0, 1.0, 0.16}, {0.0, 1.0, 0.16}};
  c.truth = {{true_effect, 1.2, 0.16}, {0.0, 1.2, 0.16}};
  c.nu = nu;
  c.runs = 200;
  c.seed = 99;
  c.planning.sigma_a.runs = 2000;
  c.planning.sigma_a.per_run_n = 2000;
  c.recalc_sigma_a.runs = 1000;
  return c;
}

}  // namespace

TEST(Population, MomentsOfGeneratedSubjects) {
  const TrueSubsetParams p{0.7, 2.0, 0.4};
  const std::vector<double> cov_var{1.0};
  Philox rng = Philox::stream(3, {0});
  SubsetSample s;
  s.n_covariates = 1;
  const std::int64_t per_arm = 100'000;
  append_subjects(s, Arm::kTreated, per_arm, p, cov_var, rng);
  append_subjects(s, Arm::kControl, per_arm, p, cov_var, rng);

  const auto half = static_cast<std::size_t>(per_arm);
  const std::span<const double> y(s.y), x(s.x);
  const double r = oracle::correlation(y.first(half), x.first(half));
  EXPECT_NEAR(r * r, 0.4, 0.01);
  const double r_c = oracle::correlation(y.last(half), x.last(half));
  EXPECT_NEAR(r_c * r_c, 0.4, 0.01);

  double mt = 0.0, mc = 0.0, vt = 0.0;
  for (std::size_t i = 0; i < half; ++i) {
    mt += y[i];
    mc += y[half + i];
  }
  mt /= static_cast<double>(half);
  mc /= static_cast<double>(half);
  for (std::size_t i = 0; i < half; ++i) vt += (y[i] - mt) * (y[i] - mt);
  vt /= static_cast<double>(half - 1);
  EXPECT_NEAR(mt - mc, 0.7, 0.03);
  EXPECT_NEAR(vt, 2.0, 0.04);
}

TEST(Population, SeveralCovariatesWithUnequalVariances) {
  const TrueSubsetParams p{0.0, 1.0, 0.3};
  const std::vector<double> cov_var{0.5, 4.0};
  Philox rng = Philox::stream(4, {0});
  SubsetSample s;
  s.n_covariates = 2;
  append_subjects(s, Arm::kControl, 100'000, p, cov_var, rng);
  const auto n = static_cast<Eigen::Index>(s.size());
  Eigen::MatrixXd m(n, 3);
  m.col(0).setOnes();
  m.rightCols(2) = s.covariates();
  const Eigen::Map<const Eigen::VectorXd> y(s.y.data(), n);
  const Eigen::VectorXd resid = y - m * m.colPivHouseholderQr().solve(y);
  const double tss = (y.array() - y.mean()).square().sum();
  EXPECT_NEAR(1.0 - resid.squaredNorm() / tss, 0.3, 0.01);
  EXPECT_NEAR((s.covariates().col(1).array() - s.covariates().col(1).mean()).square().mean(), 4.0, 0.08);
}

TEST(Population, RejectsInvalidParameters) {
  EXPECT_THROW((TrueSubsetParams{0.0, 0.0, 0.1}.validate()), ValidationError);
  EXPECT_THROW((TrueSubsetParams{0.0, 1.0, 1.0}.validate()), ValidationError);
}

TEST(Proportion, WilsonIntervalSolvesTheScoreEquation) {
  constexpr double z = 1.959963984540054;
  for (auto [hits, trials] : {std::pair<std::int64_t, std::int64_t>{25, 1000}, {0, 50}, {9000, 10000}, {1, 3}}) {
    const Proportion p = proportion(hits, trials);
    const double n = static_cast<double>(trials), ph = static_cast<double>(hits) / n;
    // roots of (ph - q)^2 = z^2 q (1 - q) / n
    const double a = 1.0 + z * z / n, b = -(2.0 * ph + z * z / n), c = ph * ph;
    const double disc = std::sqrt(b * b - 4.0 * a * c);
    EXPECT_NEAR(p.ci_low, (-b - disc) / (2.0 * a), 1e-12);
    EXPECT_NEAR(p.ci_high, (-b + disc) / (2.0 * a), 1e-12);
    EXPECT_NEAR(p.se, std::sqrt(ph * (1.0 - ph) / n), 1e-15);
  }
}

TEST(Proportion, NominalInterval) {
  const auto [lo, hi] = nominal_interval(0.025, 10'000);
  EXPECT_NEAR(lo, 0.02194, 1e-5);
  EXPECT_NEAR(hi, 0.02806, 1e-5);
}

TEST(Summary, CountsAndQuantiles) {
  ScenarioConfig c = small_scenario(0.5);
  ScenarioPlan plan{{}, 80, 40, 90, {false, false}, ClosedTestPlan(c.design)};
  std::vector<TrialOutcome> out;
  for (int k = 0; k < 11; ++k) {
    TrialOutcome o;
    o.n_final = 100 + 10 * k;
    o.n_reest = 90 + 10 * k;
    o.rejected = k % 2 ? 3U : 0U;
    o.global_rejected = k % 2 == 1;
    out.push_back(o);
  }
  TrialOutcome bad;
  bad.failed = true;
  bad.error = "boom";
  out.push_back(bad);

  const SimulationSummary s = summarize(c, plan, out);
  EXPECT_EQ(s.runs, 11);
  EXPECT_EQ(s.failed_runs, 1);
  EXPECT_EQ(s.first_error, "boom");
  EXPECT_DOUBLE_EQ(s.n_final_mean, 150.0);
  EXPECT_DOUBLE_EQ(s.n_final_q10, 110.0);
  EXPECT_DOUBLE_EQ(s.n_final_q90, 190.0);
  EXPECT_DOUBLE_EQ(s.n_reest_mean, 140.0);
  ASSERT_TRUE(s.power.has_value());
  EXPECT_FALSE(s.fwer.has_value());
  EXPECT_NEAR(s.power->estimate, 5.0 / 11.0, 1e-15);
  EXPECT_NEAR(s.elementary_rate[1], 5.0 / 11.0, 1e-15);
}

TEST(Summary, FamilywiseErrorOnlyCountsTrueNulls) {
  ScenarioConfig c = small_scenario(0.0);
  ScenarioPlan plan{{}, 80, 0, 0, {false, true}, ClosedTestPlan(c.design)};
  std::vector<TrialOutcome> out(4);
  out[0].rejected = 1U;
  out[1].rejected = 2U;
  out[2].rejected = 3U;
  const SimulationSummary s = summarize(c, plan, out);
  EXPECT_NEAR(s.fwer->estimate, 0.5, 1e-15);
  EXPECT_NEAR(s.power->estimate, 0.5, 1e-15);
}

TEST(Trial, SizesFollowTheAllocation) {
  const ScenarioConfig c = small_scenario(0.0);
  Philox rng = run_stream(c, 0);
  const auto samples = generate_trial(c, 83, rng);
  const auto cells = subset_sizes(c.design, 83);
  for (std::size_t j = 0; j < samples.size(); ++j) {
    std::int64_t treated = 0;
    for (auto t : samples[j].treated) treated += t;
    EXPECT_EQ(treated, cells[j].treated);
    EXPECT_EQ(static_cast<std::int64_t>(samples[j].size()), cells[j].total());
    EXPECT_EQ(samples[j].x.size(), samples[j].size());
  }
}

TEST(Trial, StreamsDependOnlyOnRunIndex) {
  const ScenarioConfig c = small_scenario(0.0);
  Philox a = run_stream(c, 7), b = run_stream(c, 7), other = run_stream(c, 8);
  const auto x = generate_trial(c, 40, a);
  const auto y = generate_trial(c, 40, b);
  const auto z = generate_trial(c, 40, other);
  EXPECT_EQ(x[0].y, y[0].y);
  EXPECT_NE(x[0].y, z[0].y);
}

TEST(Trial, NullCompositeCorrelationMatchesFormula) {
  ScenarioConfig c = small_scenario(0.0, 0.0);
  c.design.subsets[0].prevalence = 0.3;
  c.design.subsets[1].prevalence = 0.7;
  c.design = validate(c.design);
  const ClosedTestPlan tests(c.design);
  const int trials = 4000;
  std::vector<double> z0, z1;
  for (int k = 0; k < trials; ++k) {
    Philox rng = run_stream(c, k);
    const Analysis a = analyze(c.design, generate_trial(c, 200, rng), tests);
    z0.push_back(a.composite_z[0]);
    z1.push_back(a.composite_z[1]);
  }
  EXPECT_NEAR(oracle::correlation(z0, z1), null_covariance(c.design)(0, 1), 0.03);
}

TEST(Trial, NullPValuesAreUniform) {
  ScenarioConfig c = small_scenario(0.0, 0.0);
  std::vector<double> p;
  for (int k = 0; k < 3000; ++k) {
    Philox rng = run_stream(c, k);
    const auto samples = generate_trial(c, 60, rng);
    p.push_back(fit_subset(samples[0], 1).p);
  }
  EXPECT_LT(oracle::ks_uniform(p), 1.63 / std::sqrt(3000.0));  // 1% level
}

TEST(Scenario, WorkerCountDoesNotChangeResults) {
  const ScenarioConfig c = small_scenario(0.5);
  GridSettings one{1, Execution::kParallel, true}, four{4, Execution::kParallel, true},
      serial{1, Execution::kSerial, true};
  const ScenarioResult a = run_scenario(c, one);
  const ScenarioResult b = run_scenario(c, four);
  const ScenarioResult s = run_scenario(c, serial);
  ASSERT_TRUE(a.summary && b.summary && s.summary) << a.error;
  ASSERT_EQ(a.summary->failed_runs, 0) << a.summary->first_error;
  for (std::size_t k = 0; k < a.outcomes.size(); ++k) {
    EXPECT_EQ(a.outcomes[k].n_final, b.outcomes[k].n_final);
    EXPECT_EQ(a.outcomes[k].rejected, b.outcomes[k].rejected);
    EXPECT_EQ(a.outcomes[k].n_final, s.outcomes[k].n_final);
    EXPECT_EQ(a.outcomes[k].rejected, s.outcomes[k].rejected);
  }
  EXPECT_EQ(a.summary->power->estimate, b.summary->power->estimate);
  EXPECT_EQ(a.summary->n_final_mean, b.summary->n_final_mean);
}

TEST(Scenario, RulesBoundTheFinalSize) {
  ScenarioConfig c = small_scenario(0.3);
  c.rule = Rule::kRestricted;
  const ScenarioResult r = run_scenario(c, {1, Execution::kParallel, true});
  ASSERT_TRUE(r.summary) << r.error;
  EXPECT_EQ(r.summary->failed_runs, 0);
  for (const auto& o : r.outcomes) {
    EXPECT_GE(o.n_final, r.summary->n0);
    EXPECT_EQ(o.n_final, std::max(r.summary->n0, o.n_reest));
  }

  c.rule = Rule::kUnrestricted;
  const ScenarioResult u = run_scenario(c, {1, Execution::kParallel, true});
  ASSERT_TRUE(u.summary) << u.error;
  for (const auto& o : u.outcomes) EXPECT_EQ(o.n_final, std::max(u.summary->n1, o.n_reest));
  // true variance 1.2 exceeds the assumed 1: re-estimation should ask for more subjects
  EXPECT_GT(u.summary->n_reest_mean, static_cast<double>(u.summary->n0));
}

TEST(Scenario, FixedDesignUsesN0) {
  const ScenarioResult r = run_scenario(small_scenario(0.0), {1, Execution::kParallel, true});
  ASSERT_TRUE(r.summary) << r.error;
  EXPECT_EQ(r.summary->n1, 0);
  EXPECT_GT(r.summary->n_oracle, r.summary->n0);
  for (const auto& o : r.outcomes) EXPECT_EQ(o.n_final, r.summary->n0);
}

TEST(Scenario, ErrorsStayInTheirScenario) {
  ScenarioConfig bad = small_scenario(0.0);
  bad.name = "bad";
  bad.truth[0].variance = -1.0;
  ScenarioConfig good = small_scenario(0.0);
  const auto results = run_grid({bad, good}, {});
  ASSERT_EQ(results.size(), 2u);
  EXPECT_FALSE(results[0].summary.has_value());
  EXPECT_NE(results[0].error.find("variance"), std::string::npos) << results[0].error;
  EXPECT_TRUE(results[1].summary.has_value());
}

TEST(Scenario, Validation) {
  ScenarioConfig c = small_scenario(0.0);
  c.runs = 10;
  EXPECT_THROW(c.validate(), ValidationError);
  c = small_scenario(1.0);
  EXPECT_THROW(c.validate(), ValidationError);
  c = small_scenario(0.0);
  c.covariate_variances = {1.0, 2.0};
  EXPECT_THROW(c.validate(), ValidationError);
  c = small_scenario(0.3);
  c.recalc_sigma_a.runs = 500;
  EXPECT_THROW(c.validate(), ValidationError);
}
