#include <gtest/gtest.h>

#include <boost/math/distributions/students_t.hpp>
#include <boost/math/special_functions/beta.hpp>
#include <cmath>
#include <random>
#include <stdexcept>

#include "compop/error.hpp"
#include "compop/numerics.hpp"
#include "oracles.hpp"

using namespace compop;

TEST(NormalCdf, MatchesSeriesOracle) {
  EXPECT_EQ(normal_cdf(0.0), 0.5);
  for (double x = -5.0; x <= 5.0; x += 0.125) EXPECT_NEAR(normal_cdf(x), oracle::erf_series_cdf(x), 1e-12) << x;
  EXPECT_NEAR(normal_cdf(1.959964), 0.975, 1e-7);
}

TEST(NormalCdf, Symmetry) {
  for (double x = 0.0; x <= 8.0; x += 0.37) EXPECT_NEAR(normal_cdf(x) + normal_cdf(-x), 1.0, 1e-15);
}

TEST(NormalCdf, UpperTailIsRelativeAccurate) {
  // Mills-ratio asymptotic expansion as the far-tail oracle.
  for (double x : {10.0, 20.0, 35.0}) {
    const double mills = 1.0 / x - 1.0 / std::pow(x, 3) + 3.0 / std::pow(x, 5) - 15.0 / std::pow(x, 7);
    const double log_ref = -0.5 * x * x - 0.5 * std::log(2.0 * M_PI) + std::log(mills);
    EXPECT_NEAR(log_normal_upper(x), log_ref, 1e-6 * std::fabs(log_ref));
  }
  EXPECT_TRUE(std::isfinite(log_normal_upper(60.0)));
}

TEST(NormalQuantile, AgainstNewtonOracle) {
  EXPECT_EQ(normal_quantile(0.5), 0.0);
  EXPECT_NEAR(normal_quantile(0.975), 1.9599640, 1e-7);
  for (double p : {1e-4, 0.001, 0.02, 0.3, 0.7, 0.975, 0.999, 1.0 - 1e-4})
    EXPECT_NEAR(normal_quantile(p), oracle::newton_quantile(p), 1e-9) << p;
  // far tails, where the series oracle cancels: relative check through libm erfc
  for (double p : {1e-10, 1e-30, 1e-300}) {
    const double x = normal_quantile(p);
    EXPECT_NEAR(0.5 * std::erfc(-x / std::sqrt(2.0)) / p, 1.0, 1e-9) << p;
  }
  EXPECT_NEAR(normal_quantile(std::sqrt(0.975)), oracle::newton_quantile(std::sqrt(0.975)), 1e-10);
  EXPECT_THROW(normal_quantile(0.0), std::domain_error);
  EXPECT_THROW(normal_quantile(1.0), std::domain_error);
  EXPECT_THROW(normal_quantile(-0.2), std::domain_error);
}

TEST(NormalQuantile, RoundTripProperty) {
  for (double x = -6.0; x <= 6.0; x += 0.01) EXPECT_NEAR(normal_quantile(normal_cdf(x)), x, 1e-8) << x;
  for (double p = 0.001; p < 1.0; p += 0.0037) EXPECT_NEAR(normal_cdf(normal_quantile(p)), p, 1e-10);
}

TEST(NormalQuantile, LogUpperTailInverse) {
  for (double z : {0.5, 3.0, 9.0, 30.0, 45.0}) EXPECT_NEAR(normal_quantile_log_upper(log_normal_upper(z)), z, 1e-8 * z);
  // log tails below the smallest double still give finite scores
  EXPECT_GT(normal_quantile_log_upper(-2000.0), 60.0);
}

TEST(IncompleteBeta, AgainstBoost) {
  for (double a : {0.5, 1.0, 2.5, 30.0})
    for (double b : {0.5, 3.0, 40.0})
      for (double x : {0.01, 0.2, 0.5, 0.93})
        EXPECT_NEAR(incomplete_beta(a, b, x), boost::math::ibeta(a, b, x), 1e-12) << a << ' ' << b << ' ' << x;
}

TEST(StudentT, SpecialValues) {
  for (int df : {1, 2, 7, 100}) EXPECT_EQ(t_cdf(0.0, df), 0.5);
  EXPECT_NEAR(t_cdf(1.0, 1), 0.75, 1e-14);  // Cauchy: 1/2 + atan(x)/pi
  EXPECT_NEAR(t_cdf(2.0, 60), normal_cdf(2.0), 5e-3);
  EXPECT_THROW(t_cdf(1.0, 0), std::domain_error);
}

TEST(StudentT, AgainstBoost) {
  for (int df : {1, 2, 3, 4, 10, 37, 200, 5000}) {
    boost::math::students_t dist(df);
    for (double x : {-30.0, -4.0, -1.3, -0.2, 0.4, 1.2247, 2.5, 8.0, 25.0}) {
      EXPECT_NEAR(t_cdf(x, df), boost::math::cdf(dist, x), 1e-10) << df << ' ' << x;
      const double upper = boost::math::cdf(boost::math::complement(dist, x));
      if (upper > 1e-300) {
        EXPECT_NEAR(log_t_upper(x, df), std::log(upper), 1e-9 * std::max(1.0, -std::log(upper)));
      }
    }
  }
}

TEST(StudentT, ConvergesToNormal) {
  // Psi_df(x) - Phi(x) = -phi(x)(x^3 + x) / (4 df) + O(df^-2); at df = 1000 and
  // |x| = 2 that is 1.35e-4, so the gap is checked against the leading term.
  for (int df : {1000, 10000, 100000})
    for (double x : {-2.0, 0.0, 2.0}) {
      const double leading = -normal_pdf(x) * (x * x * x + x) / (4.0 * df);
      EXPECT_NEAR(t_cdf(x, df) - normal_cdf(x), leading, 2.0 / (static_cast<double>(df) * df)) << df << ' ' << x;
    }
  EXPECT_NEAR(t_cdf(2.0, 10000), normal_cdf(2.0), 1e-4);
}

TEST(StudentT, NormalScoreIsFiniteInTheFarTail) {
  EXPECT_NEAR(normal_score_from_t(0.0, 5), 0.0, 1e-14);
  EXPECT_NEAR(normal_score_from_t(1.2247448713915890, 4), normal_quantile(t_cdf(1.2247448713915890, 4)), 1e-12);
  const double s = normal_score_from_t(200.0, 30);
  EXPECT_TRUE(std::isfinite(s));
  EXPECT_GT(s, 10.0);
  EXPECT_EQ(normal_score_from_t(-200.0, 30), -s);
  EXPECT_LT(normal_score_from_t(100.0, 30), s);
}

TEST(Rng, StreamsAreReproducibleAndDistinct) {
  Philox a = Philox::stream(42, {1, 2});
  Philox b = Philox::stream(42, {1, 2});
  Philox c = Philox::stream(42, {1, 3});
  int same_ac = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto va = a(), vb = b(), vc = c();
    EXPECT_EQ(va, vb);
    same_ac += va == vc;
  }
  EXPECT_EQ(same_ac, 0);
}

TEST(Rng, SeekReplaysBlocks) {
  Philox a(7, 9);
  std::vector<std::uint64_t> first;
  for (int i = 0; i < 10; ++i) first.push_back(a());
  a.seek(2);
  EXPECT_EQ(a(), first[4]);
}

TEST(Rng, SamplerMoments) {
  Philox rng = Philox::stream(3, {});
  const int n = 200000;
  double s = 0, s2 = 0, g = 0, c = 0;
  for (int i = 0; i < n; ++i) {
    const double z = standard_normal(rng);
    s += z;
    s2 += z * z;
    g += gamma_variate(rng, 2.5);
    c += chi_squared(rng, 7.0);
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.015);
  EXPECT_NEAR(g / n, 2.5, 0.02);
  EXPECT_NEAR(c / n, 7.0, 0.05);
}

TEST(CorrelationMatrixType, Validation) {
  Eigen::MatrixXd bad(2, 2);
  bad << 1, 0.5, 0.4, 1;
  EXPECT_THROW(CorrelationMatrix{bad}, ValidationError);
  bad << 2, 0, 0, 1;
  EXPECT_THROW(CorrelationMatrix{bad}, ValidationError);
  Eigen::MatrixXd indefinite(3, 3);
  indefinite << 1, 0.9, -0.9, 0.9, 1, 0.9, -0.9, 0.9, 1;
  EXPECT_THROW(CorrelationMatrix{indefinite}, NumericError);
  const auto ex = CorrelationMatrix::exchangeable(3, 0.3);
  const std::vector<std::size_t> idx{0, 2};
  EXPECT_EQ(ex.restrict_to(idx).dim(), 2u);
  EXPECT_EQ(ex.restrict_to(idx)(0, 1), 0.3);
}

TEST(Mvn, AnalyticCases) {
  const std::vector<double> zero{0.0, 0.0};
  EXPECT_NEAR(mvn_cdf(zero, CorrelationMatrix::identity(2)).value, 0.25, 1e-12);
  EXPECT_NEAR(mvn_cdf(zero, CorrelationMatrix::exchangeable(2, 0.5)).value, 1.0 / 3.0, 1e-12);
  for (double c : {-1.0, 0.3, 1.7}) {
    const std::vector<double> u{c, c};
    EXPECT_NEAR(mvn_cdf(u, CorrelationMatrix::exchangeable(2, 1.0)).value, normal_cdf(c), 1e-12);
  }
  // Sheppard for several correlations, through both routes
  MvnSettings qmc;
  qmc.method = MvnMethod::kQuasiMonteCarlo;
  qmc.abs_tolerance = 1e-7;
  for (double r : {-0.9, -0.3, 0.2, 0.8}) {
    const double sheppard = 0.25 + std::asin(r) / (2.0 * M_PI);
    EXPECT_NEAR(bivariate_normal_cdf(0.0, 0.0, r), sheppard, 1e-14);
    EXPECT_NEAR(mvn_cdf(zero, CorrelationMatrix::exchangeable(2, r), qmc).value, sheppard, 1e-6);
  }
}

TEST(Mvn, IdentityFactorizes) {
  MvnSettings s;
  s.abs_tolerance = 1e-7;
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> u(-1.5, 2.5);
  for (std::size_t dim = 1; dim <= 5; ++dim) {
    std::vector<double> upper(dim);
    double product = 1.0;
    for (auto& x : upper) {
      x = u(gen);
      product *= normal_cdf(x);
    }
    EXPECT_NEAR(mvn_cdf(upper, CorrelationMatrix::identity(dim), s).value, product, 2 * s.abs_tolerance) << dim;
  }
}

TEST(Mvn, MonotoneAndBounded) {
  std::mt19937_64 gen(11);
  const CorrelationMatrix corr(oracle::random_correlation(4, 4, gen));
  std::vector<double> upper{0.1, -0.4, 0.8, 0.3};
  double prev = mvn_cdf(upper, corr).value;
  for (int step = 0; step < 8; ++step) {
    upper[static_cast<std::size_t>(step % 4)] += 0.25;
    const double cur = mvn_cdf(upper, corr).value;
    EXPECT_GE(cur, prev - 2e-6);
    EXPECT_LE(cur, 1.0);
    EXPECT_GE(cur, 0.0);
    prev = cur;
  }
}

TEST(Mvn, DeterministicInSeed) {
  const CorrelationMatrix corr = CorrelationMatrix::exchangeable(4, 0.4);
  const std::vector<double> upper{1.0, 0.5, 1.5, 0.0};
  EXPECT_EQ(mvn_cdf(upper, corr).value, mvn_cdf(upper, corr).value);
}

TEST(Mvn, ReportsUnconvergedBudget) {
  MvnSettings s;
  s.abs_tolerance = 1e-12;
  s.max_evaluations = 5000;
  const CorrelationMatrix corr = CorrelationMatrix::exchangeable(4, 0.4);
  const std::vector<double> upper{1.0, 0.5, 1.5, 0.0};
  const MvnResult r = mvn_cdf(upper, corr, s);
  EXPECT_FALSE(r.converged);
  EXPECT_GT(r.error, 0.0);
}

TEST(Mvn, AgreesWithMonteCarloOnRandomMatrices) {
  std::mt19937_64 gen(2024);
  std::uniform_real_distribution<double> u(-1.0, 2.0);
  for (int k = 0; k < 6; ++k) {
    const int dim = 2 + k % 3;
    const Eigen::MatrixXd m = oracle::random_correlation(dim, k == 5 ? dim - 1 : dim, gen);
    std::vector<double> upper(static_cast<std::size_t>(dim));
    for (auto& x : upper) x = u(gen);
    const auto ref = oracle::mc_mvn_cdf(upper, m, 1'000'000, 100 + static_cast<std::uint64_t>(k));
    const MvnResult got = mvn_cdf(upper, CorrelationMatrix(m));
    EXPECT_LE(std::fabs(got.value - ref.p), 3.0 * std::hypot(ref.se, got.error / 3.0)) << k;
  }
}

TEST(Equicoordinate, AnalyticCases) {
  EXPECT_NEAR(equicoordinate_upper(CorrelationMatrix::identity(1), 0.025), 1.9599640, 1e-6);
  EXPECT_NEAR(equicoordinate_upper(CorrelationMatrix::identity(2), 0.025), normal_quantile(std::sqrt(0.975)), 1e-6);
  const double c = equicoordinate_upper(CorrelationMatrix::exchangeable(2, 0.7071), 0.025);
  EXPECT_GT(c, 1.95996);
  EXPECT_LT(c, normal_quantile(std::sqrt(0.975)));
  // Perfect correlation collapses to one dimension
  EXPECT_NEAR(equicoordinate_upper(CorrelationMatrix::exchangeable(3, 1.0), 0.025), 1.9599640, 1e-6);
}

TEST(Equicoordinate, ExceedanceEqualsAlpha) {
  for (double r : {0.0, 0.3, 0.7}) {
    const auto corr = CorrelationMatrix::exchangeable(3, r);
    const double c = equicoordinate_upper(corr, 0.025);
    const std::vector<double> u(3, c);
    EXPECT_NEAR(1.0 - mvn_cdf(u, corr).value, 0.025, 2e-6);
  }
}

TEST(Equicoordinate, MonotoneInAlphaAndCorrelation) {
  for (double r : {0.0, 0.5}) {
    const auto corr = CorrelationMatrix::exchangeable(2, r);
    EXPECT_GT(equicoordinate_upper(corr, 0.01), equicoordinate_upper(corr, 0.025));
    EXPECT_GT(equicoordinate_upper(corr, 0.025), equicoordinate_upper(corr, 0.05));
  }
  double prev = 10.0;
  for (double r : {-0.5, 0.0, 0.3, 0.6, 0.9}) {
    const double c = equicoordinate_upper(CorrelationMatrix::exchangeable(2, r), 0.025);
    EXPECT_LE(c, prev + 1e-9);
    prev = c;
  }
}

TEST(Search, ThresholdPredicates) {
  EXPECT_EQ(smallest_n_satisfying([](std::int64_t n) { return n >= 83; }, 10), 83);
  EXPECT_EQ(smallest_n_satisfying([](std::int64_t n) { return n >= 4; }, 7), 7);
  EXPECT_EQ(smallest_n_satisfying([](std::int64_t n) { return n >= 123457; }, 1), 123457);
  EXPECT_THROW(smallest_n_satisfying([](std::int64_t) { return false; }, 1, 1000), NumericError);
}
