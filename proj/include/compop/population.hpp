#pragma once

// Subject-level data generation under the linear model: covariates are
// independent normals, the outcome loads on them so that its squared multiple
// correlation with the covariates equals rho_squared.

#include <span>
#include <vector>

#include "compop/inference.hpp"
#include "compop/rng.hpp"

namespace compop {

struct TrueSubsetParams {
  double effect = 0.0;       // treated-minus-control mean difference
  double variance = 1.0;     // within-arm outcome variance
  double rho_squared = 0.0;  // squared multiple correlation with the covariates

  void validate() const;
};

/// One subject. `covariate_variances` has one entry per covariate.
SubjectRecord generate_subject(const std::string& subset, Arm arm, const TrueSubsetParams& params,
                               std::span<const double> covariate_variances, Philox& rng);

/// Appends `count` subjects of one arm to a subset sample.
void append_subjects(SubsetSample& sample, Arm arm, std::int64_t count, const TrueSubsetParams& params,
                     std::span<const double> covariate_variances, Philox& rng);

}  // namespace compop
