#pragma once

// Covariate-adjusted subset tests, inverse-normal combination into composite
// statistics, the null correlation of those statistics, and the closed
// testing procedure with a common equicoordinate critical value per
// intersection hypothesis.

#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "compop/design.hpp"
#include "compop/numerics.hpp"

namespace compop {

enum class Arm { kTreated, kControl };

/// One subject as read from a dataset file.
struct SubjectRecord {
  std::string subset;
  std::optional<Arm> arm;  // absent in blinded data
  double y = 0.0;
  std::vector<double> x;
};

/// Column-oriented data of one subset.
struct SubsetSample {
  int n_covariates = 0;
  std::vector<double> y;
  std::vector<std::uint8_t> treated;  // 1 = treatment arm
  std::vector<double> x;              // row-major n × D

  using CovariateMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

  std::size_t size() const noexcept { return y.size(); }
  CovariateMap covariates() const {
    return {x.data(), static_cast<Eigen::Index>(y.size()), n_covariates};
  }
  void reserve(std::size_t n);
  void append(double outcome, bool is_treated, std::span<const double> covariates);
};

/// Groups records by subset label in design order. Throws ValidationError on
/// unknown labels, wrong covariate counts or missing arm labels.
std::vector<SubsetSample> group_by_subset(const DesignSpec& spec, std::span<const SubjectRecord> records);

struct SubsetFit {
  double effect = 0.0;        // adjusted treatment effect
  double variance = 0.0;      // via the ANCOVA variance decomposition
  double variance_qr = 0.0;   // sigma^2 [(X'X)^-1]_11 from the QR factorization
  double t = 0.0;
  int df = 0;
  double p = 0.0;             // 1 - Psi_df(t)
  double score = 0.0;         // Phi^-1(Psi_df(t)), computed in log space
  double residual_variance = 0.0;
  double r_squared = 0.0;     // within-arm squared multiple correlation
  Eigen::VectorXd mean_difference;  // covariate means, treated minus control
  Eigen::MatrixXd covariate_cov;    // pooled within-arm covariate covariance
  std::int64_t n_treated = 0;
  std::int64_t n_control = 0;
};

/// OLS fit of y = b0 + b1·treated + X·g + e. Throws ValidationError for
/// single-arm data or df < 1 and NumericError for rank deficiency or a
/// perfect fit.
SubsetFit fit_subset(const SubsetSample& data, int n_covariates);

enum class PValuePolicy {
  kReject,  // p of exactly 0 or 1 is an error
  kClamp,   // clamp to [1e-15, 1 - 1e-15] and flag
};

inline constexpr double kPValueClamp = 1e-15;

struct Combined {
  double z = 0.0;
  bool clamped = false;
};

/// Z = sum_{j in I} sqrt(w_j / sum_{k in I} w_k) Phi^-1(1 - p_j).
Combined combine(std::span<const double> p_values, std::span<const double> weights,
                 std::span<const std::size_t> index_set, PValuePolicy policy = PValuePolicy::kReject);

/// Same combination applied directly to normal scores Phi^-1(1 - p_j).
double combine_scores(std::span<const double> scores, std::span<const double> weights,
                      std::span<const std::size_t> index_set);

/// Composite statistics for every composite of the design.
std::vector<double> composite_statistics(const DesignSpec& spec, std::span<const double> scores);

/// Correlation of the composite statistics under the global null.
CorrelationMatrix null_covariance(const DesignSpec& spec);

struct IntersectionTest {
  std::uint32_t members = 0;  // bit r set if composite r belongs to K
  double critical_value = 0.0;
  double max_statistic = 0.0;
  bool rejected = false;
  bool evaluated = true;  // false when decided by a bound or irrelevant (R > 8 only)
};

struct ClosedTestReport {
  std::vector<double> z;
  std::vector<IntersectionTest> intersections;  // ordered by bitmask
  std::vector<bool> elementary_rejected;

  bool global_rejected() const;
  bool any_rejected() const;
};

enum class Execution { kSerial, kParallel };

/// Common critical values for every intersection of a design. Above
/// kEagerCompositeLimit composites, critical values are computed on demand.
class ClosedTestPlan {
 public:
  static constexpr std::size_t kEagerCompositeLimit = 8;

  ClosedTestPlan(const DesignSpec& spec, const MvnSettings& settings = {},
                 Execution execution = Execution::kParallel);

  std::size_t n_composites() const noexcept { return r_; }
  double alpha() const noexcept { return alpha_; }
  const CorrelationMatrix& null_correlation() const noexcept { return corr_; }

  /// c_G(K) for the intersection with bitmask `members`.
  double critical_value(std::uint32_t members) const;

  ClosedTestReport test(std::span<const double> z) const;

 private:
  double compute(std::uint32_t members) const;

  std::size_t r_;
  double alpha_;
  MvnSettings settings_;
  CorrelationMatrix corr_;
  mutable std::vector<double> critical_;  // NaN until computed
  std::unique_ptr<std::mutex> mutex_;
};

/// One-shot closed test (builds a ClosedTestPlan).
ClosedTestReport closed_test(std::span<const double> z, const DesignSpec& spec,
                             const MvnSettings& settings = {});

struct Analysis {
  std::vector<SubsetFit> fits;
  std::vector<double> composite_z;
  bool p_underflow = false;  // some p-value fell below the clamp bound kPValueClamp
  ClosedTestReport report;
};

/// Fits every subset, combines normal scores and runs the closed test.
Analysis analyze(const DesignSpec& spec, std::span<const SubsetSample> samples, const ClosedTestPlan& plan);

}  // namespace compop
