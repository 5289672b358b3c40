#pragma once

// Blinded sample size re-calculation at an internal pilot study: nuisance
// parameters are re-estimated from pooled (arm-free) data and the planning
// search is repeated with them.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "compop/design.hpp"
#include "compop/inference.hpp"
#include "compop/planning.hpp"

namespace compop {

/// One subset of interim data with the arm column removed. There is no way to
/// recover treatment labels from this type.
struct BlindedSubsetSample {
  int n_covariates = 0;
  std::vector<double> y;
  std::vector<double> x;  // row-major n × D

  std::size_t size() const noexcept { return y.size(); }
};

BlindedSubsetSample strip_arms(const SubsetSample& sample);

/// Groups arm-free records by subset label in design order; arm labels in the
/// records, if any, are ignored.
std::vector<BlindedSubsetSample> group_blinded(const DesignSpec& spec, std::span<const SubjectRecord> records);

struct BlindedSubsetEstimate {
  double residual_variance = 0.0;  // RSS / (n - 1 - D)
  double r_squared = 0.0;          // 1 - RSS / total SS
  double outcome_variance = 0.0;   // pooled sample variance of y
  std::int64_t n = 0;
};

struct BlindedEstimates {
  std::vector<BlindedSubsetEstimate> subsets;
};

/// Intercept + covariates OLS of one subset. Throws ValidationError if
/// n - 1 - D < 1 and NumericError for rank deficiency.
BlindedSubsetEstimate blinded_fit_subset(const BlindedSubsetSample& sample);

BlindedEstimates blinded_fit(std::span<const BlindedSubsetSample> samples);

enum class Rule {
  kRestricted,    // N_final = max(N0, N_reest)
  kUnrestricted,  // N_final = max(N1, N_reest)
};

const char* to_string(Rule rule) noexcept;
Rule parse_rule(const std::string& text);

/// ⌈ν·N0⌉, raised until every subset satisfies N1·τ_j − 1 − D ≥ 1 and has at
/// least one subject per arm. Throws ValidationError if that exceeds N0.
std::int64_t pilot_size(const DesignSpec& spec, std::int64_t n0, double nu);

std::int64_t final_size(Rule rule, std::int64_t n0, std::int64_t n1, std::int64_t n_reest);

struct RecalcSettings {
  PlanningSettings planning;
  bool reestimate_prevalence = false;  // use observed IPS subset shares
};

struct RecalcResult {
  std::int64_t n_reest = 0;
  PowerResult power;
  CorrelationMatrix sigma_a;
  std::vector<double> prevalences;  // prevalences used in the search
};

/// Repeats the sample size search with the blinded residual variances in the
/// noncentrality and Σ_A re-simulated from the blinded outcome variance and
/// R². Planned effects are kept.
RecalcResult recalculate(const DesignSpec& spec, std::span<const double> effects, const BlindedEstimates& blinded,
                         const RecalcSettings& settings);

}  // namespace compop
