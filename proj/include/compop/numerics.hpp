#pragma once

// Probability kernels shared by every other module: univariate normal and
// Student-t distributions, the multivariate normal CDF and equicoordinate
// quantile, and monotone integer search.

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "compop/rng.hpp"

namespace compop {

// ---------------------------------------------------------------------------
// Univariate normal
// ---------------------------------------------------------------------------

double normal_cdf(double x);

/// 1 - Phi(x) without cancellation.
double normal_upper(double x);

/// log(1 - Phi(x)), finite for all finite x.
double log_normal_upper(double x);

double normal_pdf(double x);

/// Phi^{-1}(p). Throws std::domain_error for p outside (0, 1).
double normal_quantile(double p);

/// z such that log(1 - Phi(z)) == log_q. Accepts arbitrarily small upper
/// tails (log_q far below log(DBL_MIN)).
double normal_quantile_log_upper(double log_q);

// ---------------------------------------------------------------------------
// Student t
// ---------------------------------------------------------------------------

/// Regularized incomplete beta I_x(a, b).
double incomplete_beta(double a, double b, double x);

/// Psi_df(x). Throws std::domain_error for df < 1.
double t_cdf(double x, int df);

/// log(1 - Psi_df(x)).
double log_t_upper(double x, double df);

/// Phi^{-1}(Psi_df(t)), evaluated through log tails so that extreme t
/// statistics map to finite normal scores instead of saturating at 0 or 1.
double normal_score_from_t(double t, double df);

// ---------------------------------------------------------------------------
// Sampling helpers on top of Philox streams
// ---------------------------------------------------------------------------

double standard_normal(Philox& rng);

/// Gamma(shape, 1) via Marsaglia-Tsang.
double gamma_variate(Philox& rng, double shape);

inline double chi_squared(Philox& rng, double df) { return 2.0 * gamma_variate(rng, 0.5 * df); }

// ---------------------------------------------------------------------------
// Multivariate normal
// ---------------------------------------------------------------------------

/// Symmetric, unit-diagonal, positive semi-definite matrix.
class CorrelationMatrix {
 public:
  CorrelationMatrix() = default;

  /// Validates the invariants; throws ValidationError / NumericError.
  explicit CorrelationMatrix(Eigen::MatrixXd entries);

  static CorrelationMatrix identity(std::size_t dim);
  /// All off-diagonal entries equal to rho.
  static CorrelationMatrix exchangeable(std::size_t dim, double rho);

  std::size_t dim() const noexcept { return static_cast<std::size_t>(m_.rows()); }
  double operator()(std::size_t i, std::size_t j) const { return m_(i, j); }
  const Eigen::MatrixXd& matrix() const noexcept { return m_; }

  /// Principal submatrix on the given (sorted) indices.
  CorrelationMatrix restrict_to(std::span<const std::size_t> indices) const;

 private:
  Eigen::MatrixXd m_;
};

enum class MvnMethod {
  kAuto,              // exact for dim <= 2, quasi-Monte Carlo otherwise
  kQuasiMonteCarlo,   // always use the lattice rule (used to cross-check kAuto)
};

struct MvnSettings {
  double abs_tolerance = 1e-6;
  std::int64_t max_evaluations = std::int64_t{1} << 20;
  std::uint64_t rng_seed = 0x5EED0C0FFEEULL;
  MvnMethod method = MvnMethod::kAuto;

  void validate() const;
};

struct MvnResult {
  double value = 0.0;
  double error = 0.0;           // estimated absolute error (0 for exact routes)
  std::int64_t evaluations = 0;
  bool converged = true;        // false if error > abs_tolerance at the budget
};

/// P(Z_1 <= u_1, ..., Z_R <= u_R) for Z ~ N(0, corr). Entries of `upper` may
/// be +infinity.
MvnResult mvn_cdf(std::span<const double> upper, const CorrelationMatrix& corr,
                  const MvnSettings& settings = {});

/// Rectangle probability P(a < Z <= b); either bound may be infinite.
MvnResult mvn_rectangle(std::span<const double> lower, std::span<const double> upper,
                        const CorrelationMatrix& corr, const MvnSettings& settings = {});

/// Bivariate normal P(X <= a, Y <= b) with correlation r.
double bivariate_normal_cdf(double a, double b, double r);

/// c such that 1 - P(Z_1 <= c, ..., Z_R <= c) = alpha, to 1e-6 in
/// probability.
double equicoordinate_upper(const CorrelationMatrix& corr, double alpha,
                            const MvnSettings& settings = {});

// ---------------------------------------------------------------------------
// Monotone search
// ---------------------------------------------------------------------------

inline constexpr std::int64_t kDefaultSearchCeiling = 10'000'000;

/// Smallest n >= lower with predicate(n) true, assuming the predicate is
/// false below a threshold and true from it on. Throws NumericError if the
/// predicate is still false at `ceiling`.
std::int64_t smallest_n_satisfying(const std::function<bool(std::int64_t)>& predicate,
                                   std::int64_t lower,
                                   std::int64_t ceiling = kDefaultSearchCeiling);

}  // namespace compop
