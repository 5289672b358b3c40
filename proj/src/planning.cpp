#include "compop/planning.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>

#include "compop/error.hpp"
#include "compop/population.hpp"

namespace compop {

namespace {

constexpr std::uint64_t kSigmaAStream = 0x5A;

struct SubsetDraw {
  std::int64_t n_treated;
  std::int64_t n_control;
  TrueSubsetParams params;
};

double subject_level_score(const SubsetDraw& s, int d, Philox& rng) {
  const std::vector<double> cov_var(static_cast<std::size_t>(d), 1.0);
  SubsetSample sample;
  sample.n_covariates = d;
  sample.reserve(static_cast<std::size_t>(s.n_treated + s.n_control));
  append_subjects(sample, Arm::kTreated, s.n_treated, s.params, cov_var, rng);
  append_subjects(sample, Arm::kControl, s.n_control, s.params, cov_var, rng);
  return fit_subset(sample, d).score;
}

// Exact law of the ANCOVA t statistic with normal covariates:
// the estimate is normal given the covariate imbalance Q = chi2_D / chi2_{n-1-D},
// the residual variance is an independent scaled chi2_df.
double sufficient_statistic_score(const SubsetDraw& s, int d, Philox& rng) {
  const double n = static_cast<double>(s.n_treated + s.n_control);
  const double h = 1.0 / static_cast<double>(s.n_treated) + 1.0 / static_cast<double>(s.n_control);
  const double resid_var = d > 0 ? s.params.variance * (1.0 - s.params.rho_squared) : s.params.variance;
  const double df = n - 2.0 - d;
  const double q = d > 0 ? chi_squared(rng, d) / chi_squared(rng, n - 1.0 - d) : 0.0;
  const double z = standard_normal(rng);
  const double scale = std::sqrt(chi_squared(rng, df) / df);
  const double t = (s.params.effect / std::sqrt(resid_var * h * (1.0 + q)) + z) / scale;
  return normal_score_from_t(t, df);
}

}  // namespace

void SubsetAssumption::validate() const {
  TrueSubsetParams{effect, variance, rho_squared}.validate();
}

void validate_assumptions(const DesignSpec& spec, std::span<const SubsetAssumption> assume) {
  if (assume.size() != spec.n_subsets())
    throw ValidationError("assumptions list " + std::to_string(assume.size()) + " subsets, design has " +
                          std::to_string(spec.n_subsets()));
  std::vector<std::string> v;
  for (std::size_t j = 0; j < assume.size(); ++j) {
    try {
      assume[j].validate();
    } catch (const ValidationError& e) {
      for (const auto& m : e.violations()) v.push_back("subset '" + spec.subsets[j].label + "': " + m);
    }
  }
  if (!v.empty()) throw ValidationError(v);
}

void SigmaASettings::validate() const {
  std::vector<std::string> v;
  if (runs < 1000) v.emplace_back("Sigma_A simulation needs at least 1000 runs");
  if (per_run_n < 1) v.emplace_back("Sigma_A per-run size must be positive");
  if (!v.empty()) throw ValidationError(v);
}

SigmaAEstimate estimate_sigma_a(const DesignSpec& spec, std::span<const SubsetAssumption> assume,
                                const SigmaASettings& settings) {
  settings.validate();
  validate_assumptions(spec, assume);
  const int d = spec.n_covariates;
  const std::vector<ArmCounts> cells = subset_sizes(spec, settings.per_run_n);
  std::vector<SubsetDraw> draws;
  for (std::size_t j = 0; j < cells.size(); ++j) {
    if (cells[j].total() - 2 - d < 1)
      throw ValidationError("Sigma_A per-run size leaves subset '" + spec.subsets[j].label + "' with df < 1");
    draws.push_back({cells[j].treated, cells[j].control, {assume[j].effect, assume[j].variance, assume[j].rho_squared}});
  }

  const std::size_t r = spec.n_composites();
  const std::int64_t runs = settings.runs;
  const std::vector<double> w = spec.weights();
  Eigen::MatrixXd z(runs, static_cast<Eigen::Index>(r));
  std::vector<std::exception_ptr> failures(static_cast<std::size_t>(runs));

  auto one_run = [&](std::int64_t run) {
    try {
      Philox rng = Philox::stream(settings.seed, {kSigmaAStream, static_cast<std::uint64_t>(run)});
      std::vector<double> scores(draws.size());
      for (std::size_t j = 0; j < draws.size(); ++j)
        scores[j] = settings.route == SigmaARoute::kSubjectLevel ? subject_level_score(draws[j], d, rng)
                                                                 : sufficient_statistic_score(draws[j], d, rng);
      for (std::size_t c = 0; c < r; ++c)
        z(run, static_cast<Eigen::Index>(c)) = combine_scores(scores, w, spec.composites[c]);
    } catch (...) {
      failures[static_cast<std::size_t>(run)] = std::current_exception();
    }
  };
  if (settings.execution == Execution::kParallel) {
#pragma omp parallel for schedule(static)
    for (std::int64_t run = 0; run < runs; ++run) one_run(run);
  } else {
    for (std::int64_t run = 0; run < runs; ++run) one_run(run);
  }
  for (const auto& f : failures)
    if (f) std::rethrow_exception(f);

  SigmaAEstimate out;
  out.settings = settings;
  const Eigen::RowVectorXd mean = z.colwise().mean();
  const Eigen::MatrixXd centered = z.rowwise() - mean;
  out.covariance = (centered.transpose() * centered) / static_cast<double>(runs - 1);

  const Eigen::VectorXd inv_sd = out.covariance.diagonal().cwiseSqrt().cwiseInverse();
  Eigen::MatrixXd corr = inv_sd.asDiagonal() * out.covariance * inv_sd.asDiagonal();
  corr = 0.5 * (corr + corr.transpose()).eval();
  corr.diagonal().setOnes();

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(corr);
  if (eig.eigenvalues().minCoeff() < 0.0) {
    const Eigen::VectorXd clipped = eig.eigenvalues().cwiseMax(0.0);
    Eigen::MatrixXd repaired = eig.eigenvectors() * clipped.asDiagonal() * eig.eigenvectors().transpose();
    const Eigen::VectorXd s = repaired.diagonal().cwiseSqrt().cwiseInverse();
    repaired = s.asDiagonal() * repaired * s.asDiagonal();
    repaired = 0.5 * (repaired + repaired.transpose()).eval();
    repaired.diagonal().setOnes();
    out.repair = (repaired - corr).cwiseAbs().maxCoeff();
    if (out.repair > kMaxPsdRepair)
      throw NumericError("simulated Sigma_A needed a PSD repair of " + std::to_string(out.repair));
    corr = repaired;
  }
  out.correlation = CorrelationMatrix(std::move(corr));
  return out;
}

std::vector<double> planning_residual_variances(const DesignSpec& spec, std::span<const SubsetAssumption> assume) {
  std::vector<double> v;
  v.reserve(assume.size());
  for (const auto& a : assume) v.push_back(spec.n_covariates > 0 ? a.variance * (1.0 - a.rho_squared) : a.variance);
  return v;
}

std::vector<double> noncentrality(const DesignSpec& spec, std::span<const double> effects,
                                  std::span<const double> residual_variances, double n, ImbalanceTerm imbalance) {
  if (effects.size() != spec.n_subsets() || residual_variances.size() != spec.n_subsets())
    throw ValidationError("noncentrality: per-subset inputs do not match the design");
  const double d = spec.n_covariates;
  std::vector<double> delta(spec.n_subsets(), 0.0);
  for (std::size_t j = 0; j < spec.n_subsets(); ++j) {
    const double nj = n * spec.subsets[j].prevalence;
    const double n_t = nj * spec.kappa / (1.0 + spec.kappa);
    const double n_c = nj / (1.0 + spec.kappa);
    if (nj - 2.0 - d <= 0.0) continue;
    double factor = (nj - 2.0) / (nj - 2.0 - d);
    if (d > 0 && imbalance == ImbalanceTerm::kExpected) {
      if (nj - d - 3.0 <= 0.0) continue;
      factor *= 1.0 + d / (nj - d - 3.0);
    }
    delta[j] = effects[j] / std::sqrt(factor * residual_variances[j] * (1.0 / n_t + 1.0 / n_c));
  }
  return delta;
}

std::vector<double> mean_shift(const DesignSpec& spec, std::span<const SubsetAssumption> assume, double n,
                               ImbalanceTerm imbalance) {
  std::vector<double> effects;
  for (const auto& a : assume) effects.push_back(a.effect);
  const std::vector<double> delta =
      noncentrality(spec, effects, planning_residual_variances(spec, assume), n, imbalance);
  return composite_statistics(spec, delta);
}

std::int64_t sample_size_floor(const DesignSpec& spec) {
  std::int64_t floor = 1;
  for (const auto& s : spec.subsets) {
    const double need = (3.0 + spec.n_covariates) / s.prevalence;
    floor = std::max(floor, static_cast<std::int64_t>(std::ceil(need - 1e-9)));
  }
  return floor;
}

double global_critical_value(const DesignSpec& spec, const MvnSettings& mvn) {
  const CorrelationMatrix sigma_0 = null_covariance(spec);
  if (sigma_0.dim() == 1) return normal_quantile(1.0 - spec.alpha);
  return equicoordinate_upper(sigma_0, spec.alpha, mvn);
}

AlternativeModel make_alternative(const DesignSpec& spec, std::span<const double> effects,
                                  std::span<const double> residual_variances, const CorrelationMatrix& sigma_a,
                                  const PlanningSettings& settings) {
  if (sigma_a.dim() != spec.n_composites()) throw ValidationError("Sigma_A dimension does not match the design");
  AlternativeModel alt;
  alt.effects.assign(effects.begin(), effects.end());
  alt.residual_variances.assign(residual_variances.begin(), residual_variances.end());
  alt.sigma_a = sigma_a;
  alt.critical_value = global_critical_value(spec, settings.mvn);
  alt.imbalance = settings.imbalance;
  for (double v : alt.residual_variances)
    if (!(v > 0.0)) throw ValidationError("residual variances must be positive");
  return alt;
}

PowerResult disjunctive_power(const DesignSpec& spec, const AlternativeModel& alt, std::int64_t n,
                              const MvnSettings& mvn) {
  PowerResult out;
  out.n = n;
  out.floor = sample_size_floor(spec);
  out.critical_value = alt.critical_value;
  if (n < out.floor)
    throw ValidationError("total size " + std::to_string(n) + " is below the floor " + std::to_string(out.floor) +
                          " (every subset needs n·τ − 2 − D ≥ 1)");
  const std::vector<double> delta =
      noncentrality(spec, alt.effects, alt.residual_variances, static_cast<double>(n), alt.imbalance);
  out.mean_shift = composite_statistics(spec, delta);
  std::vector<double> upper(out.mean_shift.size());
  for (std::size_t r = 0; r < upper.size(); ++r) upper[r] = alt.critical_value - out.mean_shift[r];
  out.power = std::clamp(1.0 - mvn_cdf(upper, alt.sigma_a, mvn).value, 0.0, 1.0);
  return out;
}

PowerResult required_sample_size(const DesignSpec& spec, const AlternativeModel& alt, double target_power,
                                 const PlanningSettings& settings) {
  if (!(target_power > 0.0 && target_power < 1.0)) throw ValidationError("target power must lie in (0, 1)");
  const std::int64_t floor = sample_size_floor(spec);
  const std::int64_t n = smallest_n_satisfying(
      [&](std::int64_t m) { return disjunctive_power(spec, alt, m, settings.mvn).power >= target_power; }, floor,
      settings.search_ceiling);
  return disjunctive_power(spec, alt, n, settings.mvn);
}

SampleSizePlan plan_sample_size(const DesignSpec& spec, std::span<const SubsetAssumption> assume,
                                const PlanningSettings& settings) {
  validate_assumptions(spec, assume);
  SampleSizePlan plan;
  plan.sigma_0 = null_covariance(spec);
  plan.sigma_a = estimate_sigma_a(spec, assume, settings.sigma_a);
  std::vector<double> effects;
  for (const auto& a : assume) effects.push_back(a.effect);
  plan.alternative =
      make_alternative(spec, effects, planning_residual_variances(spec, assume), plan.sigma_a.correlation, settings);
  plan.result = required_sample_size(spec, plan.alternative, spec.target_power, settings);
  plan.allocation = subset_sizes(spec, plan.result.n);
  return plan;
}

}  // namespace compop
