#pragma once

// Monte Carlo harness for operating characteristics: fixed designs and
// designs with a blinded internal pilot study, run over scenario grids.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "compop/design.hpp"
#include "compop/inference.hpp"
#include "compop/planning.hpp"
#include "compop/population.hpp"
#include "compop/recalc.hpp"

namespace compop {

struct ScenarioConfig {
  std::string name;
  DesignSpec design;
  SubsetAssumptions assumed;
  std::vector<TrueSubsetParams> truth;
  std::vector<double> covariate_variances;  // empty = all ones
  double nu = 0.0;                          // 0 = fixed design
  Rule rule = Rule::kUnrestricted;
  std::int64_t runs = 10'000;
  std::uint64_t seed = 1;
  PlanningSettings planning;      // N0 from the assumptions, oracle N from the truth
  SigmaASettings recalc_sigma_a;  // Σ_A re-simulation at the pilot study
  bool reestimate_prevalence = false;
  bool compute_oracle = true;

  ScenarioConfig();
  void validate() const;
  std::vector<double> resolved_covariate_variances() const;
};

/// Quantities fixed for every run of a scenario.
struct ScenarioPlan {
  SampleSizePlan planned;
  std::int64_t n0 = 0;
  std::int64_t n1 = 0;        // 0 for fixed designs
  std::int64_t n_oracle = 0;  // 0 when not computed
  std::vector<bool> null_true;  // per composite: no positive true effect inside
  ClosedTestPlan tests;
};

ScenarioPlan prepare_scenario(const ScenarioConfig& config);

struct TrialOutcome {
  std::int64_t n_final = 0;
  std::int64_t n_reest = 0;
  std::uint32_t rejected = 0;  // elementary rejections as a bitmask
  bool global_rejected = false;
  bool failed = false;
  std::string error;
};

/// Draws one trial of total size n with the true parameters.
std::vector<SubsetSample> generate_trial(const ScenarioConfig& config, std::int64_t n, Philox& rng);

TrialOutcome run_fixed(const ScenarioConfig& config, const ScenarioPlan& plan, Philox& rng);
TrialOutcome run_ips(const ScenarioConfig& config, const ScenarioPlan& plan, Philox& rng);

/// Stream of run `run` of the scenario; independent of the execution order.
Philox run_stream(const ScenarioConfig& config, std::int64_t run);

struct Proportion {
  double estimate = 0.0;
  double se = 0.0;        // sqrt(p(1-p)/B)
  double ci_low = 0.0;    // Wilson 95%
  double ci_high = 0.0;
};

Proportion proportion(std::int64_t hits, std::int64_t trials);

/// Interval α ± 1.96·sqrt(α(1−α)/B) expected for an exact-level test.
std::pair<double, double> nominal_interval(double alpha, std::int64_t runs);

struct SimulationSummary {
  std::string scenario;
  std::int64_t runs = 0;
  std::int64_t failed_runs = 0;
  std::string first_error;
  std::int64_t n0 = 0;
  std::int64_t n1 = 0;
  std::int64_t n_oracle = 0;
  std::vector<double> elementary_rate;
  double global_rate = 0.0;
  std::optional<Proportion> fwer;   // when some composite null is true
  std::optional<Proportion> power;  // when some composite null is false
  double fwer_nominal_low = 0.0;    // α ± 1.96·sqrt(α(1−α)/B)
  double fwer_nominal_high = 0.0;
  double n_final_mean = 0.0;
  double n_final_q10 = 0.0;
  double n_final_q90 = 0.0;
  double n_reest_mean = 0.0;
};

SimulationSummary summarize(const ScenarioConfig& config, const ScenarioPlan& plan,
                            const std::vector<TrialOutcome>& outcomes);

struct ScenarioResult {
  std::string name;
  std::optional<SimulationSummary> summary;
  std::string error;  // set when the scenario could not be run
  std::vector<TrialOutcome> outcomes;  // kept when requested
};

struct GridSettings {
  int workers = 1;
  Execution execution = Execution::kParallel;
  bool keep_outcomes = false;
};

/// Runs one scenario: every run uses its own stream and writes its outcome by
/// index, so the result does not depend on `workers`.
ScenarioResult run_scenario(const ScenarioConfig& config, const GridSettings& settings);

/// Runs every scenario; failures are recorded per scenario.
std::vector<ScenarioResult> run_grid(const std::vector<ScenarioConfig>& scenarios, const GridSettings& settings);

}  // namespace compop
