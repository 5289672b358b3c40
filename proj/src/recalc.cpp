#include "compop/recalc.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "compop/error.hpp"

namespace compop {

BlindedSubsetSample strip_arms(const SubsetSample& sample) {
  return {sample.n_covariates, sample.y, sample.x};
}

std::vector<BlindedSubsetSample> group_blinded(const DesignSpec& spec, std::span<const SubjectRecord> records) {
  std::map<std::string, std::size_t> index;
  for (std::size_t j = 0; j < spec.n_subsets(); ++j) index[spec.subsets[j].label] = j;
  std::vector<BlindedSubsetSample> out(spec.n_subsets());
  for (auto& s : out) s.n_covariates = spec.n_covariates;
  std::vector<std::string> problems;
  for (std::size_t k = 0; k < records.size(); ++k) {
    const auto& r = records[k];
    auto it = index.find(r.subset);
    if (it == index.end()) {
      problems.push_back("record " + std::to_string(k + 1) + ": unknown subset '" + r.subset + "'");
      continue;
    }
    if (static_cast<int>(r.x.size()) != spec.n_covariates) {
      problems.push_back("record " + std::to_string(k + 1) + ": expected " + std::to_string(spec.n_covariates) +
                         " covariates");
      continue;
    }
    auto& s = out[it->second];
    s.y.push_back(r.y);
    s.x.insert(s.x.end(), r.x.begin(), r.x.end());
  }
  if (!problems.empty()) throw ValidationError(problems);
  return out;
}

BlindedSubsetEstimate blinded_fit_subset(const BlindedSubsetSample& sample) {
  const int d = sample.n_covariates;
  const auto n = static_cast<Eigen::Index>(sample.size());
  if (sample.x.size() != sample.y.size() * static_cast<std::size_t>(d))
    throw ValidationError("blinded data columns have inconsistent sizes");
  const Eigen::Index df = n - 1 - d;
  if (df < 1) throw ValidationError("blinded subset has fewer than 2 + D subjects (df < 1)");

  const Eigen::Map<const Eigen::VectorXd> y(sample.y.data(), n);
  const double mean = y.mean();
  const double tss = (y.array() - mean).square().sum();

  double rss = tss;
  if (d > 0) {
    Eigen::MatrixXd m(n, 1 + d);
    m.col(0).setOnes();
    m.rightCols(d) = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        sample.x.data(), n, d);
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(m);
    qr.setThreshold(1e-10);
    if (qr.rank() < 1 + d) throw NumericError("blinded design matrix is rank deficient");
    rss = (y - m * qr.solve(y)).squaredNorm();
  }
  if (!(rss > 1e-14 * std::max(tss, 1e-300))) throw NumericError("blinded residual variance is zero");

  BlindedSubsetEstimate e;
  e.n = n;
  e.residual_variance = rss / static_cast<double>(df);
  e.r_squared = std::clamp(1.0 - rss / tss, 0.0, 1.0 - 1e-12);
  e.outcome_variance = tss / static_cast<double>(n - 1);
  return e;
}

BlindedEstimates blinded_fit(std::span<const BlindedSubsetSample> samples) {
  BlindedEstimates out;
  out.subsets.reserve(samples.size());
  for (const auto& s : samples) out.subsets.push_back(blinded_fit_subset(s));
  return out;
}

const char* to_string(Rule rule) noexcept {
  return rule == Rule::kRestricted ? "restricted" : "unrestricted";
}

Rule parse_rule(const std::string& text) {
  if (text == "restricted") return Rule::kRestricted;
  if (text == "unrestricted") return Rule::kUnrestricted;
  throw ValidationError("rule must be 'restricted' or 'unrestricted', got '" + text + "'");
}

std::int64_t pilot_size(const DesignSpec& spec, std::int64_t n0, double nu) {
  if (!(nu > 0.0 && nu < 1.0)) throw ValidationError("nu must lie in (0, 1)");
  if (n0 < 1) throw ValidationError("N0 must be positive");
  std::int64_t n1 = static_cast<std::int64_t>(std::ceil(nu * static_cast<double>(n0) - 1e-9));
  auto feasible = [&](std::int64_t n) {
    for (const auto& s : spec.subsets)
      if (static_cast<double>(n) * s.prevalence - 1.0 - spec.n_covariates < 1.0 - 1e-9) return false;
    try {
      for (const auto& c : subset_sizes(spec, n))
        if (c.total() - 1 - spec.n_covariates < 1) return false;
    } catch (const ValidationError&) {
      return false;
    }
    return true;
  };
  while (!feasible(n1)) {
    if (++n1 > n0)
      throw ValidationError("internal pilot study of size ceil(nu*N0) cannot meet the per-subset floor "
                            "N1*tau - 1 - D >= 1 without exceeding N0");
  }
  return n1;
}

std::int64_t final_size(Rule rule, std::int64_t n0, std::int64_t n1, std::int64_t n_reest) {
  return rule == Rule::kRestricted ? std::max(n0, n_reest) : std::max(n1, n_reest);
}

RecalcResult recalculate(const DesignSpec& spec, std::span<const double> effects, const BlindedEstimates& blinded,
                         const RecalcSettings& settings) {
  if (blinded.subsets.size() != spec.n_subsets() || effects.size() != spec.n_subsets())
    throw ValidationError("blinded estimates do not match the design");

  DesignSpec working = spec;
  if (settings.reestimate_prevalence) {
    double total = 0.0;
    for (const auto& e : blinded.subsets) total += static_cast<double>(e.n);
    for (std::size_t j = 0; j < spec.n_subsets(); ++j)
      working.subsets[j].prevalence = static_cast<double>(blinded.subsets[j].n) / total;
    working = validate(std::move(working));
  }

  SubsetAssumptions resim;
  std::vector<double> residual;
  for (std::size_t j = 0; j < spec.n_subsets(); ++j) {
    const auto& e = blinded.subsets[j];
    if (!(e.residual_variance > 0.0)) throw ValidationError("blinded residual variance must be positive");
    resim.push_back({effects[j], e.outcome_variance, spec.n_covariates > 0 ? e.r_squared : 0.0});
    residual.push_back(e.residual_variance);
  }

  RecalcResult out;
  out.prevalences = working.prevalences();
  out.sigma_a = estimate_sigma_a(working, resim, settings.planning.sigma_a).correlation;
  const AlternativeModel alt = make_alternative(working, effects, residual, out.sigma_a, settings.planning);
  out.power = required_sample_size(working, alt, spec.target_power, settings.planning);
  out.n_reest = out.power.n;
  return out;
}

}  // namespace compop
