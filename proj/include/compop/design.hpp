#pragma once

// Population structure of a trial: disjoint subsets with prevalences, the
// composite populations tested (unions of subsets), weights, allocation ratio
// and test parameters.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace compop {

inline constexpr std::size_t kMaxComposites = 12;

struct Subset {
  std::string label;
  double prevalence = 0.0;
  std::optional<double> weight;  // defaults to the prevalence

  double effective_weight() const noexcept { return weight.value_or(prevalence); }
};

/// Sorted 0-based subset indices forming one composite population.
using IndexSet = std::vector<std::size_t>;

struct DesignSpec {
  std::vector<Subset> subsets;
  std::vector<IndexSet> composites;
  double kappa = 1.0;  // treated : control
  int n_covariates = 0;
  double alpha = 0.025;  // one-sided
  double target_power = 0.9;

  std::size_t n_subsets() const noexcept { return subsets.size(); }
  std::size_t n_composites() const noexcept { return composites.size(); }
  std::vector<double> weights() const;
  std::vector<double> prevalences() const;
};

/// Checks every invariant and returns the spec with composites sorted.
/// Throws ValidationError listing all violations.
DesignSpec validate(DesignSpec spec);

/// I_r ∩ I_r'.
IndexSet overlap(const DesignSpec& spec, std::size_t r, std::size_t r2);

struct ArmCounts {
  std::int64_t treated = 0;
  std::int64_t control = 0;

  std::int64_t total() const noexcept { return treated + control; }
  friend bool operator==(const ArmCounts&, const ArmCounts&) = default;
};

/// Integer apportionment of `total_n` subjects. Subset totals are rounded by
/// largest remainder on N·τ_j, then each subset is split between arms so that
/// the treated total is the rounded N·κ/(1+κ). Ties go to the lower subset
/// index (and to the treated arm). Throws ValidationError if any subset/arm
/// cell would be empty.
std::vector<ArmCounts> subset_sizes(const DesignSpec& spec, std::int64_t total_n);

}  // namespace compop
