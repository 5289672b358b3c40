#include "compop/population.hpp"

#include <cmath>

#include "compop/error.hpp"

namespace compop {

namespace {

// Outcome = mean + sum_d gamma_d x_d + e with Var(sum gamma x) = rho^2 sigma^2.
template <typename Sink>
void draw(Arm arm, const TrueSubsetParams& p, std::span<const double> cov_var, Philox& rng, Sink&& sink,
          std::vector<double>& x) {
  const std::size_t d = cov_var.size();
  const double sd_y = std::sqrt(p.variance);
  const double rho = std::sqrt(p.rho_squared);
  double y = arm == Arm::kTreated ? p.effect : 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    const double sd_x = std::sqrt(cov_var[k]);
    x[k] = sd_x * standard_normal(rng);
    y += rho * sd_y / (std::sqrt(static_cast<double>(d)) * sd_x) * x[k];
  }
  const double resid_var = d > 0 ? p.variance * (1.0 - p.rho_squared) : p.variance;
  y += std::sqrt(resid_var) * standard_normal(rng);
  sink(y);
}

}  // namespace

void TrueSubsetParams::validate() const {
  std::vector<std::string> v;
  if (!std::isfinite(effect)) v.emplace_back("effect must be finite");
  if (!(variance > 0.0 && std::isfinite(variance))) v.emplace_back("variance must be positive");
  if (!(rho_squared >= 0.0 && rho_squared < 1.0)) v.emplace_back("rho_squared must lie in [0, 1)");
  if (!v.empty()) throw ValidationError(v);
}

SubjectRecord generate_subject(const std::string& subset, Arm arm, const TrueSubsetParams& params,
                               std::span<const double> covariate_variances, Philox& rng) {
  SubjectRecord rec;
  rec.subset = subset;
  rec.arm = arm;
  rec.x.resize(covariate_variances.size());
  draw(arm, params, covariate_variances, rng, [&](double y) { rec.y = y; }, rec.x);
  return rec;
}

void append_subjects(SubsetSample& sample, Arm arm, std::int64_t count, const TrueSubsetParams& params,
                     std::span<const double> covariate_variances, Philox& rng) {
  if (static_cast<int>(covariate_variances.size()) != sample.n_covariates)
    throw ValidationError("covariate variance count does not match the sample");
  std::vector<double> x(covariate_variances.size());
  sample.reserve(sample.size() + static_cast<std::size_t>(count));
  for (std::int64_t i = 0; i < count; ++i)
    draw(arm, params, covariate_variances, rng,
         [&](double y) { sample.append(y, arm == Arm::kTreated, x); }, x);
}

}  // namespace compop
