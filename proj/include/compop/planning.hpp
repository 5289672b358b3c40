#pragma once

// Sample size calculation: simulate the correlation of the composite
// statistics under the planning alternative, derive their mean shift as a
// function of the total size, and search the smallest size whose disjunctive
// power reaches the target.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "compop/design.hpp"
#include "compop/inference.hpp"
#include "compop/numerics.hpp"

namespace compop {

/// Planning values for one subset.
struct SubsetAssumption {
  double effect = 0.0;
  double variance = 1.0;
  double rho_squared = 0.0;

  void validate() const;
};

using SubsetAssumptions = std::vector<SubsetAssumption>;

void validate_assumptions(const DesignSpec& spec, std::span<const SubsetAssumption> assume);

enum class SigmaARoute {
  kSubjectLevel,         // simulate every subject and fit the ANCOVA
  kSufficientStatistic,  // draw each subset's t statistic from its exact law
};

struct SigmaASettings {
  std::int64_t runs = 10'000;
  std::int64_t per_run_n = 5'000;
  std::uint64_t seed = 20'240'601;
  SigmaARoute route = SigmaARoute::kSubjectLevel;
  Execution execution = Execution::kParallel;

  void validate() const;
};

struct SigmaAEstimate {
  CorrelationMatrix correlation;
  Eigen::MatrixXd covariance;  // raw empirical covariance of the composite statistics
  double repair = 0.0;         // largest entry change made by the PSD repair
  SigmaASettings settings;
};

inline constexpr double kMaxPsdRepair = 1e-3;

/// Empirical correlation of simulated composite statistics. Deterministic in
/// settings.seed, identical for serial and parallel execution.
SigmaAEstimate estimate_sigma_a(const DesignSpec& spec, std::span<const SubsetAssumption> assume,
                                const SigmaASettings& settings);

/// Treatment of the covariate mean imbalance in the planning variance.
enum class ImbalanceTerm {
  kExpected,  // keep its expectation D / (n_j - D - 3)
  kIgnored,   // drop it, as if covariate means were balanced exactly
};

/// Per-subset residual variance used for planning: (1 - rho^2) sigma^2, or
/// sigma^2 when the design has no covariates.
std::vector<double> planning_residual_variances(const DesignSpec& spec, std::span<const SubsetAssumption> assume);

/// Noncentrality of each subset statistic at total size n (real-valued arm
/// sizes). Subsets with too few subjects for the imbalance term get 0.
std::vector<double> noncentrality(const DesignSpec& spec, std::span<const double> effects,
                                  std::span<const double> residual_variances, double n,
                                  ImbalanceTerm imbalance = ImbalanceTerm::kExpected);

/// Composite means Z*_r(n).
std::vector<double> mean_shift(const DesignSpec& spec, std::span<const SubsetAssumption> assume, double n,
                               ImbalanceTerm imbalance = ImbalanceTerm::kExpected);

/// Smallest total size with n·τ_j − 2 − D ≥ 1 for every subset.
std::int64_t sample_size_floor(const DesignSpec& spec);

/// Everything needed to evaluate disjunctive power as a function of n.
struct AlternativeModel {
  std::vector<double> effects;
  std::vector<double> residual_variances;
  CorrelationMatrix sigma_a;
  double critical_value = 0.0;  // c_G of the full intersection under the null
  ImbalanceTerm imbalance = ImbalanceTerm::kExpected;
};

struct PlanningSettings {
  SigmaASettings sigma_a;
  MvnSettings mvn;
  ImbalanceTerm imbalance = ImbalanceTerm::kExpected;
  std::int64_t search_ceiling = kDefaultSearchCeiling;
};

/// Critical value of the global intersection.
double global_critical_value(const DesignSpec& spec, const MvnSettings& mvn);

AlternativeModel make_alternative(const DesignSpec& spec, std::span<const double> effects,
                                  std::span<const double> residual_variances, const CorrelationMatrix& sigma_a,
                                  const PlanningSettings& settings);

struct PowerResult {
  std::int64_t n = 0;
  double power = 0.0;
  double critical_value = 0.0;
  std::int64_t floor = 0;
  std::vector<double> mean_shift;
};

/// 1 - P(Z* <= c_G) with Z* ~ N(mean_shift(n), sigma_a).
PowerResult disjunctive_power(const DesignSpec& spec, const AlternativeModel& alt, std::int64_t n,
                              const MvnSettings& mvn = {});

/// Smallest n at or above the floor whose power reaches the target.
PowerResult required_sample_size(const DesignSpec& spec, const AlternativeModel& alt, double target_power,
                                 const PlanningSettings& settings);

struct SampleSizePlan {
  PowerResult result;
  SigmaAEstimate sigma_a;
  CorrelationMatrix sigma_0;
  AlternativeModel alternative;
  std::vector<ArmCounts> allocation;
};

/// Full planning pipeline: Σ_A once, then the search at spec.target_power.
SampleSizePlan plan_sample_size(const DesignSpec& spec, std::span<const SubsetAssumption> assume,
                                const PlanningSettings& settings);

}  // namespace compop
