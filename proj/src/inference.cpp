#include "compop/inference.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "compop/error.hpp"

namespace compop {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void check_index_set(std::span<const std::size_t> index_set, std::size_t n, std::span<const double> weights) {
  if (index_set.empty()) throw ValidationError("combination index set is empty");
  for (std::size_t j : index_set) {
    if (j >= n || j >= weights.size()) throw ValidationError("combination index out of range");
    if (!(weights[j] > 0.0)) throw ValidationError("combination weights must be positive");
  }
}

double weight_total(std::span<const double> weights, std::span<const std::size_t> index_set) {
  double total = 0.0;
  for (std::size_t j : index_set) total += weights[j];
  return total;
}

std::vector<std::size_t> members_of(std::uint32_t mask) {
  std::vector<std::size_t> out;
  for (std::size_t r = 0; mask != 0; ++r, mask >>= 1)
    if (mask & 1U) out.push_back(r);
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Data containers
// ---------------------------------------------------------------------------

void SubsetSample::reserve(std::size_t n) {
  y.reserve(n);
  treated.reserve(n);
  x.reserve(n * static_cast<std::size_t>(n_covariates));
}

void SubsetSample::append(double outcome, bool is_treated, std::span<const double> covariates) {
  if (static_cast<int>(covariates.size()) != n_covariates)
    throw ValidationError("covariate count does not match the subset sample");
  y.push_back(outcome);
  treated.push_back(is_treated ? 1 : 0);
  x.insert(x.end(), covariates.begin(), covariates.end());
}

std::vector<SubsetSample> group_by_subset(const DesignSpec& spec, std::span<const SubjectRecord> records) {
  std::map<std::string, std::size_t> index;
  for (std::size_t j = 0; j < spec.n_subsets(); ++j) index[spec.subsets[j].label] = j;

  std::vector<SubsetSample> out(spec.n_subsets());
  for (auto& s : out) s.n_covariates = spec.n_covariates;
  std::vector<std::string> problems;
  for (std::size_t k = 0; k < records.size(); ++k) {
    const auto& r = records[k];
    const std::string where = "record " + std::to_string(k + 1);
    auto it = index.find(r.subset);
    if (it == index.end()) {
      problems.push_back(where + ": unknown subset '" + r.subset + "'");
      continue;
    }
    if (static_cast<int>(r.x.size()) != spec.n_covariates) {
      problems.push_back(where + ": expected " + std::to_string(spec.n_covariates) + " covariates");
      continue;
    }
    if (!r.arm) {
      problems.push_back(where + ": missing arm label");
      continue;
    }
    out[it->second].append(r.y, *r.arm == Arm::kTreated, r.x);
  }
  if (!problems.empty()) throw ValidationError(problems);
  return out;
}

// ---------------------------------------------------------------------------
// Subset test
// ---------------------------------------------------------------------------

SubsetFit fit_subset(const SubsetSample& data, int n_covariates) {
  const auto n = static_cast<Eigen::Index>(data.size());
  const int d = n_covariates;
  if (data.n_covariates != d || data.treated.size() != data.y.size() ||
      data.x.size() != data.y.size() * static_cast<std::size_t>(d))
    throw ValidationError("subset data columns have inconsistent sizes");
  const auto xs = data.covariates();

  SubsetFit fit;
  for (std::uint8_t t : data.treated) (t ? fit.n_treated : fit.n_control) += 1;
  if (fit.n_treated == 0 || fit.n_control == 0) throw ValidationError("subset data contain a single arm only");
  fit.df = static_cast<int>(n) - 2 - d;
  if (fit.df < 1) throw ValidationError("subset has fewer than 3 + D subjects (df < 1)");

  Eigen::MatrixXd m(n, 2 + d);
  m.col(0).setOnes();
  for (Eigen::Index k = 0; k < n; ++k) m(k, 1) = data.treated[static_cast<std::size_t>(k)];
  if (d > 0) m.rightCols(d) = xs;
  const Eigen::Map<const Eigen::VectorXd> y(data.y.data(), n);

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(m);
  qr.setThreshold(1e-10);
  if (qr.rank() < 2 + d) throw NumericError("design matrix is rank deficient");
  const Eigen::VectorXd coef = qr.solve(y);
  const double rss = (y - m * coef).squaredNorm();

  // Within-arm sums of squares for Y and the covariates.
  const double n_t = static_cast<double>(fit.n_treated);
  const double n_c = static_cast<double>(fit.n_control);
  double sum_y[2] = {0.0, 0.0};
  Eigen::MatrixXd sum_x = Eigen::MatrixXd::Zero(d, 2);
  for (Eigen::Index k = 0; k < n; ++k) {
    const int a = data.treated[static_cast<std::size_t>(k)];
    sum_y[a] += y(k);
    if (d > 0) sum_x.col(a) += xs.row(k).transpose();
  }
  const double mean_y[2] = {sum_y[0] / n_c, sum_y[1] / n_t};
  const Eigen::VectorXd mean_x_c = sum_x.col(0) / n_c;
  const Eigen::VectorXd mean_x_t = sum_x.col(1) / n_t;
  double ssw_y = 0.0;
  Eigen::MatrixXd centered(n, d);
  for (Eigen::Index k = 0; k < n; ++k) {
    const int a = data.treated[static_cast<std::size_t>(k)];
    ssw_y += (y(k) - mean_y[a]) * (y(k) - mean_y[a]);
    if (d > 0) centered.row(k) = xs.row(k) - (a ? mean_x_t : mean_x_c).transpose();
  }
  const Eigen::MatrixXd w = centered.transpose() * centered;

  if (!(rss > 1e-14 * std::max(ssw_y, 1e-300)) || !(ssw_y > 0.0))
    throw NumericError("residual variance is zero (outcome is an exact linear function of the covariates)");

  fit.effect = coef(1);
  fit.residual_variance = rss / fit.df;
  fit.r_squared = 1.0 - rss / ssw_y;
  fit.mean_difference = mean_x_t - mean_x_c;
  fit.covariate_cov = d > 0 ? Eigen::MatrixXd(w / static_cast<double>(n - 2)) : Eigen::MatrixXd(0, 0);

  double imbalance = 0.0;
  if (d > 0) {
    Eigen::LDLT<Eigen::MatrixXd> ldlt(w);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || ldlt.vectorD().minCoeff() <= 1e-12 * w.diagonal().maxCoeff())
      throw NumericError("covariate covariance matrix is singular");
    imbalance = fit.mean_difference.dot(ldlt.solve(fit.mean_difference));
  }
  fit.variance = fit.residual_variance * (1.0 / n_t + 1.0 / n_c + imbalance);

  const Eigen::MatrixXd r = qr.matrixR().topLeftCorner(2 + d, 2 + d).triangularView<Eigen::Upper>();
  const Eigen::MatrixXd r_inv =
      r.triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(2 + d, 2 + d));
  const Eigen::MatrixXd inv_perm = r_inv * r_inv.transpose();
  const Eigen::MatrixXd inv = qr.colsPermutation() * inv_perm * qr.colsPermutation().transpose();
  fit.variance_qr = fit.residual_variance * inv(1, 1);

  fit.t = fit.effect / std::sqrt(fit.variance);
  fit.p = std::exp(log_t_upper(fit.t, fit.df));
  fit.score = normal_score_from_t(fit.t, fit.df);
  return fit;
}

// ---------------------------------------------------------------------------
// Combination
// ---------------------------------------------------------------------------

Combined combine(std::span<const double> p_values, std::span<const double> weights,
                 std::span<const std::size_t> index_set, PValuePolicy policy) {
  check_index_set(index_set, p_values.size(), weights);
  const double total = weight_total(weights, index_set);
  Combined out;
  for (std::size_t j : index_set) {
    double p = p_values[j];
    if (std::isnan(p) || p < 0.0 || p > 1.0) throw ValidationError("p-values must lie in [0, 1]");
    if (policy == PValuePolicy::kClamp) {
      const double c = std::clamp(p, kPValueClamp, 1.0 - kPValueClamp);
      out.clamped = out.clamped || c != p;
      p = c;
    } else if (p == 0.0 || p == 1.0) {
      throw ValidationError("p-value of exactly 0 or 1 cannot be combined without clamping");
    }
    out.z += std::sqrt(weights[j] / total) * -normal_quantile(p);
  }
  return out;
}

double combine_scores(std::span<const double> scores, std::span<const double> weights,
                      std::span<const std::size_t> index_set) {
  check_index_set(index_set, scores.size(), weights);
  const double total = weight_total(weights, index_set);
  double z = 0.0;
  for (std::size_t j : index_set) z += std::sqrt(weights[j] / total) * scores[j];
  return z;
}

std::vector<double> composite_statistics(const DesignSpec& spec, std::span<const double> scores) {
  const std::vector<double> w = spec.weights();
  std::vector<double> z;
  z.reserve(spec.n_composites());
  for (const auto& c : spec.composites) z.push_back(combine_scores(scores, w, c));
  return z;
}

CorrelationMatrix null_covariance(const DesignSpec& spec) {
  const std::size_t r = spec.n_composites();
  const std::vector<double> w = spec.weights();
  Eigen::MatrixXd m(r, r);
  for (std::size_t a = 0; a < r; ++a) {
    for (std::size_t b = a; b < r; ++b) {
      if (a == b) {
        m(a, a) = 1.0;
        continue;
      }
      const IndexSet shared = overlap(spec, a, b);
      const double num = weight_total(w, shared);
      m(a, b) = m(b, a) =
          num / std::sqrt(weight_total(w, spec.composites[a]) * weight_total(w, spec.composites[b]));
    }
  }
  return CorrelationMatrix(std::move(m));
}

// ---------------------------------------------------------------------------
// Closed testing
// ---------------------------------------------------------------------------

bool ClosedTestReport::global_rejected() const { return !intersections.empty() && intersections.back().rejected; }

bool ClosedTestReport::any_rejected() const {
  return std::any_of(elementary_rejected.begin(), elementary_rejected.end(), [](bool b) { return b; });
}

ClosedTestPlan::ClosedTestPlan(const DesignSpec& spec, const MvnSettings& settings, Execution execution)
    : r_(spec.n_composites()),
      alpha_(spec.alpha),
      settings_(settings),
      corr_(null_covariance(spec)),
      critical_(std::size_t{1} << spec.n_composites(), kNaN),
      mutex_(std::make_unique<std::mutex>()) {
  settings_.validate();
  if (r_ == 0 || r_ > kMaxComposites) throw ValidationError("number of composites must lie in [1, 12]");
  if (r_ > kEagerCompositeLimit) return;
  const auto count = static_cast<std::int64_t>(critical_.size());
  if (execution == Execution::kParallel) {
#pragma omp parallel for schedule(dynamic)
    for (std::int64_t mask = 1; mask < count; ++mask)
      critical_[static_cast<std::size_t>(mask)] = compute(static_cast<std::uint32_t>(mask));
  } else {
    for (std::int64_t mask = 1; mask < count; ++mask)
      critical_[static_cast<std::size_t>(mask)] = compute(static_cast<std::uint32_t>(mask));
  }
}

double ClosedTestPlan::compute(std::uint32_t members) const {
  const std::vector<std::size_t> idx = members_of(members);
  if (idx.size() == 1) return normal_quantile(1.0 - alpha_);
  return equicoordinate_upper(corr_.restrict_to(idx), alpha_, settings_);
}

double ClosedTestPlan::critical_value(std::uint32_t members) const {
  if (members == 0 || members >= critical_.size()) throw ValidationError("intersection bitmask out of range");
  if (r_ <= kEagerCompositeLimit) return critical_[members];
  std::lock_guard lock(*mutex_);
  double& c = critical_[members];
  if (std::isnan(c)) c = compute(members);
  return c;
}

ClosedTestReport ClosedTestPlan::test(std::span<const double> z) const {
  if (z.size() != r_) throw ValidationError("number of composite statistics does not match the design");
  for (double v : z)
    if (std::isnan(v)) throw ValidationError("composite statistic is NaN");

  const std::uint32_t full = (std::uint32_t{1} << r_) - 1;
  ClosedTestReport rep;
  rep.z.assign(z.begin(), z.end());
  rep.intersections.resize(full);
  rep.elementary_rejected.assign(r_, true);

  auto max_over = [&](std::uint32_t mask) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < r_; ++r)
      if (mask & (1U << r)) m = std::max(m, z[r]);
    return m;
  };

  if (r_ <= kEagerCompositeLimit) {
    for (std::uint32_t mask = 1; mask <= full; ++mask) {
      auto& t = rep.intersections[mask - 1];
      t.members = mask;
      t.max_statistic = max_over(mask);
      t.critical_value = critical_[mask];
      t.rejected = t.max_statistic >= t.critical_value;
      if (!t.rejected)
        for (std::size_t r = 0; r < r_; ++r)
          if (mask & (1U << r)) rep.elementary_rejected[r] = false;
    }
    return rep;
  }

  // Larger families: visit intersections from the largest down. Critical
  // values grow with K, so the singleton and full-family values bound every
  // c_G(K); intersections whose members are all already retained cannot
  // change any elementary decision and are skipped.
  std::vector<std::uint32_t> order(full);
  std::iota(order.begin(), order.end(), 1U);
  std::stable_sort(order.begin(), order.end(),
                   [](std::uint32_t a, std::uint32_t b) { return std::popcount(a) > std::popcount(b); });
  const double c_low = normal_quantile(1.0 - alpha_);
  const double c_high = critical_value(full);
  std::uint32_t retained = 0;
  for (std::uint32_t mask : order) {
    auto& t = rep.intersections[mask - 1];
    t.members = mask;
    t.max_statistic = max_over(mask);
    if ((mask & ~retained) == 0) {
      t.evaluated = false;
      t.critical_value = kNaN;
      t.rejected = t.max_statistic >= c_high;
      continue;
    }
    if (t.max_statistic >= c_high && mask != full) {
      t.evaluated = false;
      t.critical_value = kNaN;
      t.rejected = true;
    } else if (t.max_statistic < c_low) {
      t.evaluated = false;
      t.critical_value = kNaN;
      t.rejected = false;
    } else {
      t.critical_value = critical_value(mask);
      t.rejected = t.max_statistic >= t.critical_value;
    }
    if (!t.rejected) retained |= mask;
  }
  for (std::size_t r = 0; r < r_; ++r) rep.elementary_rejected[r] = (retained & (1U << r)) == 0;
  return rep;
}

ClosedTestReport closed_test(std::span<const double> z, const DesignSpec& spec, const MvnSettings& settings) {
  return ClosedTestPlan(spec, settings).test(z);
}

Analysis analyze(const DesignSpec& spec, std::span<const SubsetSample> samples, const ClosedTestPlan& plan) {
  if (samples.size() != spec.n_subsets()) throw ValidationError("analysis needs one sample per subset");
  Analysis a;
  std::vector<double> scores;
  for (const auto& s : samples) {
    a.fits.push_back(fit_subset(s, spec.n_covariates));
    scores.push_back(a.fits.back().score);
    a.p_underflow = a.p_underflow || a.fits.back().p < kPValueClamp;
  }
  a.composite_z = composite_statistics(spec, scores);
  a.report = plan.test(a.composite_z);
  return a;
}

}  // namespace compop
