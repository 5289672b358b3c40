#include <gtest/gtest.h>

#include <cmath>

#include "compop/error.hpp"
#include "compop/population.hpp"
#include "compop/recalc.hpp"

using namespace compop;

namespace {

DesignSpec table_design(double tau1, int d = 1) {
  DesignSpec s;
  s.subsets = {{"S1", tau1, {}}, {"S2", 1.0 - tau1, {}}};
  s.composites = {{0}, {0, 1}};
  s.n_covariates = d;
  return validate(s);
}

// Simple regression by the textbook sums of squares.
struct LineFit {
  double rss;
  double tss;
};

LineFit line_fit(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(y.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  return {syy - sxy * sxy / sxx, syy};
}

BlindedSubsetSample pooled_sample(std::int64_t per_arm, const TrueSubsetParams& p, int d, std::uint64_t seed) {
  SubsetSample s;
  s.n_covariates = d;
  const std::vector<double> cov_var(static_cast<std::size_t>(d), 1.0);
  Philox rng = Philox::stream(seed, {1});
  append_subjects(s, Arm::kTreated, per_arm, p, cov_var, rng);
  append_subjects(s, Arm::kControl, per_arm, p, cov_var, rng);
  return strip_arms(s);
}

RecalcSettings quick_settings() {
  RecalcSettings rs;
  rs.planning.sigma_a.runs = 2000;
  rs.planning.sigma_a.per_run_n = 2000;
  return rs;
}

}  // namespace

TEST(BlindedFit, MatchesSimpleRegression) {
  const std::vector<double> x{0.3, -1.2, 2.0, 0.7, -0.4, 1.1, -2.2};
  const std::vector<double> y{1.0, -0.5, 3.1, 0.2, 0.9, 1.7, -1.9};
  const BlindedSubsetEstimate e = blinded_fit_subset({1, y, x});
  const LineFit ref = line_fit(x, y);
  EXPECT_NEAR(e.residual_variance, ref.rss / 5.0, 1e-12);
  EXPECT_NEAR(e.r_squared, 1.0 - ref.rss / ref.tss, 1e-12);
  EXPECT_NEAR(e.outcome_variance, ref.tss / 6.0, 1e-12);
  EXPECT_EQ(e.n, 7);
}

TEST(BlindedFit, NoCovariatesIsSampleVariance) {
  const std::vector<double> y{2.0, 4.0, 4.0, 5.0, 7.0};
  const BlindedSubsetEstimate e = blinded_fit_subset({0, y, {}});
  EXPECT_NEAR(e.residual_variance, 3.3, 1e-12);
  EXPECT_NEAR(e.outcome_variance, 3.3, 1e-12);
  EXPECT_NEAR(e.r_squared, 0.0, 1e-12);
}

TEST(BlindedFit, Errors) {
  EXPECT_THROW(blinded_fit_subset({1, {1.0, 2.0}, {0.0, 1.0}}), ValidationError);
  EXPECT_THROW(blinded_fit_subset({1, {1.0, 2.0, 3.0, 4.0}, {1.0, 1.0, 1.0, 1.0}}), NumericError);
  EXPECT_THROW(blinded_fit_subset({0, {1.0, 1.0, 1.0}, {}}), NumericError);
  EXPECT_THROW(blinded_fit_subset({1, {1.0, 2.0, 3.0}, {1.0}}), ValidationError);
}

TEST(BlindedFit, ExpectedInflationFromTheEffect) {
  // The pooled residual variance absorbs the arm difference: (1 - rho^2) sigma^2 + beta^2 / 4.
  const TrueSubsetParams p{1.0, 1.5, 0.3};
  const BlindedSubsetEstimate e = blinded_fit_subset(pooled_sample(100'000, p, 1, 5));
  EXPECT_NEAR(e.residual_variance, 0.7 * 1.5 + 0.25, 0.02);
  EXPECT_NEAR(e.outcome_variance, 1.5 + 0.25, 0.02);
}

TEST(Blinding, ArmLabelsAreDropped) {
  const DesignSpec spec = table_design(0.5);
  const std::vector<SubjectRecord> records{
      {"S1", Arm::kTreated, 1.0, {0.5}}, {"S2", std::nullopt, 2.0, {0.1}}, {"S1", Arm::kControl, 3.0, {-0.2}}};
  const auto groups = group_blinded(spec, records);
  ASSERT_EQ(groups.size(), 2u);
  EXPECT_EQ(groups[0].y, (std::vector<double>{1.0, 3.0}));
  EXPECT_EQ(groups[0].x, (std::vector<double>{0.5, -0.2}));
  EXPECT_EQ(groups[1].size(), 1u);
  const std::vector<SubjectRecord> unknown{{"S9", std::nullopt, 1.0, {0.0}}};
  EXPECT_THROW(group_blinded(spec, unknown), ValidationError);
  const std::vector<SubjectRecord> short_row{{"S1", std::nullopt, 1.0, {}}};
  EXPECT_THROW(group_blinded(spec, short_row), ValidationError);
}

TEST(Rules, ParseAndFinalSize) {
  EXPECT_EQ(parse_rule("restricted"), Rule::kRestricted);
  EXPECT_EQ(parse_rule("unrestricted"), Rule::kUnrestricted);
  EXPECT_THROW(parse_rule("Restricted"), ValidationError);
  EXPECT_STREQ(to_string(Rule::kRestricted), "restricted");

  EXPECT_EQ(final_size(Rule::kRestricted, 100, 50, 80), 100);
  EXPECT_EQ(final_size(Rule::kRestricted, 100, 50, 130), 130);
  EXPECT_EQ(final_size(Rule::kUnrestricted, 100, 50, 80), 80);
  EXPECT_EQ(final_size(Rule::kUnrestricted, 100, 50, 30), 50);
}

TEST(PilotSize, CeilingOfFraction) {
  const DesignSpec spec = table_design(0.5);
  EXPECT_EQ(pilot_size(spec, 83, 0.5), 42);
  EXPECT_EQ(pilot_size(spec, 100, 0.3), 30);
  EXPECT_EQ(pilot_size(spec, 81, 0.3), 25);
  EXPECT_THROW(pilot_size(spec, 83, 0.0), ValidationError);
  EXPECT_THROW(pilot_size(spec, 83, 1.0), ValidationError);
}

TEST(PilotSize, RaisedToTheSubsetFloor) {
  const DesignSpec spec = table_design(0.25, 1);
  const std::int64_t n1 = pilot_size(spec, 20, 0.3);
  EXPECT_GE(n1, 12);  // 0.25 n - 2 >= 1
  EXPECT_LE(n1, 20);
  for (const auto& c : subset_sizes(spec, n1)) EXPECT_GE(c.total() - 2, 1);
  EXPECT_THROW(pilot_size(table_design(0.25, 3), 18, 0.3), ValidationError);
}

TEST(Recalculate, ExactPlanningValuesReproduceN0) {
  const DesignSpec spec = table_design(0.5);
  const SubsetAssumptions assume{{1.0, 1.0, 0.16}, {0.0, 1.0, 0.16}};
  RecalcSettings rs = quick_settings();
  const SampleSizePlan plan = plan_sample_size(spec, assume, rs.planning);

  BlindedEstimates exact;
  for (std::size_t j = 0; j < assume.size(); ++j) exact.subsets.push_back({0.84, 0.16, 1.0, 40});
  const std::vector<double> effects{1.0, 0.0};
  const RecalcResult r = recalculate(spec, effects, exact, rs);
  EXPECT_EQ(r.n_reest, plan.result.n);
  EXPECT_EQ(r.sigma_a.matrix(), plan.sigma_a.correlation.matrix());
}

TEST(Recalculate, LargerVarianceNeedsMoreSubjects) {
  const DesignSpec spec = table_design(0.5);
  const std::vector<double> effects{1.0, 0.0};
  RecalcSettings rs = quick_settings();
  std::int64_t prev = 0;
  for (double v : {0.6, 0.84, 1.2, 2.0}) {
    BlindedEstimates b;
    for (int j = 0; j < 2; ++j) b.subsets.push_back({v, 0.16, v / 0.84, 40});
    const std::int64_t n = recalculate(spec, effects, b, rs).n_reest;
    EXPECT_GT(n, prev) << v;
    prev = n;
  }
}

TEST(Recalculate, ObservedPrevalences) {
  const DesignSpec spec = table_design(0.5);
  const std::vector<double> effects{1.0, 0.0};
  RecalcSettings rs = quick_settings();
  rs.reestimate_prevalence = true;
  BlindedEstimates b;
  b.subsets = {{0.84, 0.16, 1.0, 30}, {0.84, 0.16, 1.0, 10}};
  const RecalcResult r = recalculate(spec, effects, b, rs);
  EXPECT_NEAR(r.prevalences[0], 0.75, 1e-15);
  EXPECT_NEAR(r.prevalences[1], 0.25, 1e-15);

  b.subsets.pop_back();
  EXPECT_THROW(recalculate(spec, effects, b, rs), ValidationError);
}
