#include "compop/design.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "compop/error.hpp"

namespace compop {

namespace {

// Largest-remainder rounding of real targets to integers summing to `total`.
// Ties on the remainder go to the lower index.
std::vector<std::int64_t> largest_remainder(const std::vector<double>& targets, std::int64_t total) {
  std::vector<std::int64_t> out(targets.size());
  std::vector<double> frac(targets.size());
  std::int64_t assigned = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const double fl = std::floor(targets[i] + 1e-9);
    out[i] = static_cast<std::int64_t>(fl);
    frac[i] = std::max(0.0, targets[i] - fl);
    assigned += out[i];
  }
  std::vector<std::size_t> order(targets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return frac[a] > frac[b] + 1e-12; });
  for (std::size_t k = 0; assigned < total; k = (k + 1) % order.size()) {
    ++out[order[k]];
    ++assigned;
  }
  return out;
}

}  // namespace

std::vector<double> DesignSpec::weights() const {
  std::vector<double> w;
  w.reserve(subsets.size());
  for (const auto& s : subsets) w.push_back(s.effective_weight());
  return w;
}

std::vector<double> DesignSpec::prevalences() const {
  std::vector<double> t;
  t.reserve(subsets.size());
  for (const auto& s : subsets) t.push_back(s.prevalence);
  return t;
}

DesignSpec validate(DesignSpec spec) {
  std::vector<std::string> v;
  const std::size_t j = spec.n_subsets();
  if (j == 0) v.emplace_back("design has no subsets");

  double total = 0.0;
  std::set<std::string> labels;
  for (std::size_t i = 0; i < j; ++i) {
    const auto& s = spec.subsets[i];
    const std::string name = "subset '" + s.label + "'";
    if (s.label.empty()) v.push_back("subset " + std::to_string(i + 1) + " has an empty label");
    if (!labels.insert(s.label).second) v.push_back(name + " is declared more than once");
    if (!(s.prevalence > 0.0 && s.prevalence <= 1.0)) v.push_back(name + ": prevalence must lie in (0, 1]");
    if (s.weight && !(*s.weight > 0.0 && std::isfinite(*s.weight))) v.push_back(name + ": weight must be positive");
    total += s.prevalence;
  }
  if (j > 0 && std::fabs(total - 1.0) > 1e-9)
    v.push_back("prevalences sum to " + std::to_string(total) + ", not 1");

  if (spec.composites.empty()) v.emplace_back("design has no composite populations");
  if (spec.composites.size() > kMaxComposites)
    v.push_back("at most " + std::to_string(kMaxComposites) + " composite populations are supported");
  for (std::size_t r = 0; r < spec.composites.size(); ++r) {
    auto& c = spec.composites[r];
    const std::string name = "composite " + std::to_string(r + 1);
    if (c.empty()) {
      v.push_back(name + " is empty");
      continue;
    }
    std::sort(c.begin(), c.end());
    if (std::adjacent_find(c.begin(), c.end()) != c.end()) v.push_back(name + " repeats a subset");
    if (c.back() >= j) v.push_back(name + " references a subset out of range");
  }
  for (std::size_t r = 0; r < spec.composites.size(); ++r)
    for (std::size_t q = r + 1; q < spec.composites.size(); ++q)
      if (!spec.composites[r].empty() && spec.composites[r] == spec.composites[q])
        v.push_back("composites " + std::to_string(r + 1) + " and " + std::to_string(q + 1) + " are identical");

  if (!(spec.kappa > 0.0 && std::isfinite(spec.kappa))) v.emplace_back("kappa must be positive");
  if (spec.n_covariates < 0) v.emplace_back("n_covariates must be non-negative");
  if (!(spec.alpha > 0.0 && spec.alpha < 0.5)) v.emplace_back("alpha must lie in (0, 0.5)");
  if (!(spec.target_power >= 0.5 && spec.target_power < 1.0)) v.emplace_back("target_power must lie in [0.5, 1)");

  if (!v.empty()) throw ValidationError(v);
  return spec;
}

IndexSet overlap(const DesignSpec& spec, std::size_t r, std::size_t r2) {
  if (r >= spec.n_composites() || r2 >= spec.n_composites())
    throw ValidationError("composite index out of range");
  IndexSet out;
  const auto& a = spec.composites[r];
  const auto& b = spec.composites[r2];
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

std::vector<ArmCounts> subset_sizes(const DesignSpec& spec, std::int64_t total_n) {
  if (total_n < 1) throw ValidationError("total sample size must be positive");
  const std::size_t j = spec.n_subsets();
  const double share_t = spec.kappa / (1.0 + spec.kappa);

  std::vector<double> targets(j);
  for (std::size_t i = 0; i < j; ++i) targets[i] = static_cast<double>(total_n) * spec.subsets[i].prevalence;
  const std::vector<std::int64_t> per_subset = largest_remainder(targets, total_n);

  // Treated arm total; an exact half goes to the treated arm.
  const double t_target = static_cast<double>(total_n) * share_t;
  const double t_floor = std::floor(t_target + 1e-9);
  const auto treated_total = static_cast<std::int64_t>(t_target - t_floor >= 0.5 - 1e-9 ? t_floor + 1.0 : t_floor);

  for (std::size_t i = 0; i < j; ++i) targets[i] = static_cast<double>(per_subset[i]) * share_t;
  const std::vector<std::int64_t> treated = largest_remainder(targets, treated_total);

  std::vector<ArmCounts> out(j);
  for (std::size_t i = 0; i < j; ++i) {
    out[i] = {treated[i], per_subset[i] - treated[i]};
    if (out[i].treated < 1 || out[i].control < 1)
      throw ValidationError("total sample size " + std::to_string(total_n) + " leaves subset '" +
                            spec.subsets[i].label + "' without subjects in one arm");
  }
  return out;
}

}  // namespace compop
