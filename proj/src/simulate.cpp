#include "compop/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <tuple>

#include "compop/error.hpp"

namespace compop {

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

std::vector<double> assumed_effects(const ScenarioConfig& config) {
  std::vector<double> e;
  for (const auto& a : config.assumed) e.push_back(a.effect);
  return e;
}

void top_up(const ScenarioConfig& config, std::vector<SubsetSample>& samples, const std::vector<ArmCounts>& have,
            const std::vector<ArmCounts>& want, Philox& rng) {
  const std::vector<double> cov_var = config.resolved_covariate_variances();
  for (std::size_t j = 0; j < samples.size(); ++j) {
    append_subjects(samples[j], Arm::kTreated, std::max<std::int64_t>(0, want[j].treated - have[j].treated),
                    config.truth[j], cov_var, rng);
    append_subjects(samples[j], Arm::kControl, std::max<std::int64_t>(0, want[j].control - have[j].control),
                    config.truth[j], cov_var, rng);
  }
}

TrialOutcome finish(const ScenarioConfig& config, const ScenarioPlan& plan, const std::vector<SubsetSample>& samples,
                    TrialOutcome out) {
  const Analysis a = analyze(config.design, samples, plan.tests);
  for (std::size_t r = 0; r < a.report.elementary_rejected.size(); ++r)
    if (a.report.elementary_rejected[r]) out.rejected |= 1U << r;
  out.global_rejected = a.report.global_rejected();
  return out;
}

double quantile_sorted(const std::vector<double>& v, double q) {
  if (v.empty()) return 0.0;
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

ScenarioConfig::ScenarioConfig() {
  recalc_sigma_a.route = SigmaARoute::kSufficientStatistic;
  recalc_sigma_a.execution = Execution::kSerial;
}

std::vector<double> ScenarioConfig::resolved_covariate_variances() const {
  if (covariate_variances.empty()) return std::vector<double>(static_cast<std::size_t>(design.n_covariates), 1.0);
  return covariate_variances;
}

void ScenarioConfig::validate() const {
  std::vector<std::string> v;
  const std::string where = "scenario '" + name + "': ";
  if (runs < 100) v.push_back(where + "runs must be at least 100");
  if (truth.size() != design.n_subsets()) v.push_back(where + "true parameters must be given for every subset");
  for (std::size_t j = 0; j < truth.size(); ++j) {
    try {
      truth[j].validate();
    } catch (const ValidationError& e) {
      for (const auto& m : e.violations()) v.push_back(where + "true subset " + std::to_string(j + 1) + ": " + m);
    }
  }
  if (!covariate_variances.empty()) {
    if (static_cast<int>(covariate_variances.size()) != design.n_covariates)
      v.push_back(where + "one covariate variance per covariate is required");
    for (double c : covariate_variances)
      if (!(c > 0.0)) v.push_back(where + "covariate variances must be positive");
  }
  if (!(nu >= 0.0 && nu < 1.0)) v.push_back(where + "nu must lie in [0, 1)");
  for (const SigmaASettings* sa : {&planning.sigma_a, &recalc_sigma_a}) {
    try {
      sa->validate();
    } catch (const ValidationError& e) {
      for (const auto& m : e.violations()) v.push_back(where + m);
    }
  }
  if (!v.empty()) throw ValidationError(v);
  validate_assumptions(design, assumed);
}

ScenarioPlan prepare_scenario(const ScenarioConfig& config) {
  config.validate();
  SampleSizePlan planned = plan_sample_size(config.design, config.assumed, config.planning);
  const std::int64_t n0 = planned.result.n;
  const std::int64_t n1 = config.nu > 0.0 ? pilot_size(config.design, n0, config.nu) : 0;

  std::int64_t n_oracle = 0;
  const bool any_effect =
      std::any_of(config.truth.begin(), config.truth.end(), [](const TrueSubsetParams& t) { return t.effect > 0.0; });
  if (config.compute_oracle && any_effect) {
    SubsetAssumptions truth;
    for (const auto& t : config.truth) truth.push_back({t.effect, t.variance, t.rho_squared});
    n_oracle = plan_sample_size(config.design, truth, config.planning).result.n;
  }

  std::vector<bool> null_true;
  for (const auto& c : config.design.composites)
    null_true.push_back(std::all_of(c.begin(), c.end(), [&](std::size_t j) { return config.truth[j].effect <= 0.0; }));

  return ScenarioPlan{std::move(planned), n0, n1, n_oracle, std::move(null_true),
                      ClosedTestPlan(config.design, config.planning.mvn)};
}

std::vector<SubsetSample> generate_trial(const ScenarioConfig& config, std::int64_t n, Philox& rng) {
  const std::vector<ArmCounts> cells = subset_sizes(config.design, n);
  std::vector<SubsetSample> samples(config.design.n_subsets());
  for (auto& s : samples) s.n_covariates = config.design.n_covariates;
  top_up(config, samples, std::vector<ArmCounts>(cells.size()), cells, rng);
  return samples;
}

TrialOutcome run_fixed(const ScenarioConfig& config, const ScenarioPlan& plan, Philox& rng) {
  TrialOutcome out;
  out.n_final = plan.n0;
  out.n_reest = plan.n0;
  return finish(config, plan, generate_trial(config, plan.n0, rng), std::move(out));
}

TrialOutcome run_ips(const ScenarioConfig& config, const ScenarioPlan& plan, Philox& rng) {
  if (plan.n1 < 1) throw ValidationError("scenario has no internal pilot study");
  std::vector<SubsetSample> samples = generate_trial(config, plan.n1, rng);

  std::vector<BlindedSubsetSample> blinded;
  for (const auto& s : samples) blinded.push_back(strip_arms(s));
  const BlindedEstimates estimates = blinded_fit(blinded);

  RecalcSettings rs;
  rs.planning = config.planning;
  rs.planning.sigma_a = config.recalc_sigma_a;
  rs.reestimate_prevalence = config.reestimate_prevalence;
  const RecalcResult re = recalculate(config.design, assumed_effects(config), estimates, rs);

  TrialOutcome out;
  out.n_reest = re.n_reest;
  out.n_final = final_size(config.rule, plan.n0, plan.n1, re.n_reest);
  if (out.n_final > plan.n1)
    top_up(config, samples, subset_sizes(config.design, plan.n1), subset_sizes(config.design, out.n_final), rng);
  return finish(config, plan, samples, std::move(out));
}

Philox run_stream(const ScenarioConfig& config, std::int64_t run) {
  return Philox::stream(config.seed, {fnv1a(config.name), static_cast<std::uint64_t>(run)});
}

Proportion proportion(std::int64_t hits, std::int64_t trials) {
  Proportion p;
  if (trials <= 0) return p;
  const double n = static_cast<double>(trials);
  p.estimate = static_cast<double>(hits) / n;
  p.se = std::sqrt(p.estimate * (1.0 - p.estimate) / n);
  constexpr double z = 1.959963984540054;
  const double denom = 1.0 + z * z / n;
  const double centre = (p.estimate + z * z / (2.0 * n)) / denom;
  const double half = z * std::sqrt(p.estimate * (1.0 - p.estimate) / n + z * z / (4.0 * n * n)) / denom;
  p.ci_low = std::max(0.0, centre - half);
  p.ci_high = std::min(1.0, centre + half);
  return p;
}

std::pair<double, double> nominal_interval(double alpha, std::int64_t runs) {
  const double half = 1.959963984540054 * std::sqrt(alpha * (1.0 - alpha) / static_cast<double>(runs));
  return {alpha - half, alpha + half};
}

SimulationSummary summarize(const ScenarioConfig& config, const ScenarioPlan& plan,
                            const std::vector<TrialOutcome>& outcomes) {
  SimulationSummary s;
  s.scenario = config.name;
  s.n0 = plan.n0;
  s.n1 = plan.n1;
  s.n_oracle = plan.n_oracle;
  const std::size_t r = config.design.n_composites();
  std::uint32_t true_nulls = 0, false_nulls = 0;
  for (std::size_t k = 0; k < r; ++k) (plan.null_true[k] ? true_nulls : false_nulls) |= 1U << k;

  std::vector<std::int64_t> elementary(r, 0);
  std::int64_t global = 0, fwer_hits = 0, power_hits = 0;
  std::vector<double> n_final;
  double n_reest_sum = 0.0;
  for (const auto& o : outcomes) {
    if (o.failed) {
      if (s.failed_runs++ == 0) s.first_error = o.error;
      continue;
    }
    for (std::size_t k = 0; k < r; ++k)
      if (o.rejected & (1U << k)) ++elementary[k];
    global += o.global_rejected ? 1 : 0;
    fwer_hits += (o.rejected & true_nulls) ? 1 : 0;
    power_hits += (o.rejected & false_nulls) ? 1 : 0;
    n_final.push_back(static_cast<double>(o.n_final));
    n_reest_sum += static_cast<double>(o.n_reest);
  }
  s.runs = static_cast<std::int64_t>(n_final.size());
  if (s.runs == 0) return s;
  const double b = static_cast<double>(s.runs);
  for (std::int64_t e : elementary) s.elementary_rate.push_back(static_cast<double>(e) / b);
  s.global_rate = static_cast<double>(global) / b;
  if (true_nulls) s.fwer = proportion(fwer_hits, s.runs);
  std::tie(s.fwer_nominal_low, s.fwer_nominal_high) = nominal_interval(config.design.alpha, s.runs);
  if (false_nulls) s.power = proportion(power_hits, s.runs);

  std::sort(n_final.begin(), n_final.end());
  double sum = 0.0;
  for (double v : n_final) sum += v;
  s.n_final_mean = sum / b;
  s.n_final_q10 = quantile_sorted(n_final, 0.1);
  s.n_final_q90 = quantile_sorted(n_final, 0.9);
  s.n_reest_mean = n_reest_sum / b;
  return s;
}

ScenarioResult run_scenario(const ScenarioConfig& config, const GridSettings& settings) {
  ScenarioResult result;
  result.name = config.name;
  try {
    const ScenarioPlan plan = prepare_scenario(config);
    std::vector<TrialOutcome> outcomes(static_cast<std::size_t>(config.runs));
    const bool ips = config.nu > 0.0;
    auto one = [&](std::int64_t run) {
      auto& o = outcomes[static_cast<std::size_t>(run)];
      try {
        Philox rng = run_stream(config, run);
        o = ips ? run_ips(config, plan, rng) : run_fixed(config, plan, rng);
      } catch (const std::exception& e) {
        o = TrialOutcome{};
        o.failed = true;
        o.error = e.what();
      }
    };
    if (settings.execution == Execution::kParallel) {
      const int workers = std::max(1, settings.workers);
#pragma omp parallel for num_threads(workers) schedule(dynamic, 8)
      for (std::int64_t run = 0; run < config.runs; ++run) one(run);
    } else {
      for (std::int64_t run = 0; run < config.runs; ++run) one(run);
    }
    result.summary = summarize(config, plan, outcomes);
    if (settings.keep_outcomes) result.outcomes = std::move(outcomes);
  } catch (const std::exception& e) {
    result.error = e.what();
  }
  return result;
}

std::vector<ScenarioResult> run_grid(const std::vector<ScenarioConfig>& scenarios, const GridSettings& settings) {
  std::vector<ScenarioResult> out;
  out.reserve(scenarios.size());
  for (const auto& s : scenarios) out.push_back(run_scenario(s, settings));
  return out;
}

}  // namespace compop
