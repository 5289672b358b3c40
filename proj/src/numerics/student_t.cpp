#include <cmath>
#include <limits>
#include <stdexcept>

#include "compop/numerics.hpp"

namespace compop {

namespace {

// Continued fraction for the incomplete beta (modified Lentz).
double beta_continued_fraction(double a, double b, double x) {
  constexpr double kTiny = 1e-300;
  constexpr double kEps = 1e-16;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 20000; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) return h;
  }
  return h;
}

double log_beta(double a, double b) { return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b); }

// log I_x(a, b) by the direct continued fraction. Caller ensures
// x < (a + 1) / (a + b + 2), where the fraction converges quickly.
double log_ibeta_direct(double a, double b, double x, double log_x, double log1m_x) {
  return a * log_x + b * log1m_x - log_beta(a, b) - std::log(a) +
         std::log(beta_continued_fraction(a, b, x));
}

// log of the upper t tail for t >= 0.
double log_t_upper_nonneg(double t, double df) {
  const double a = 0.5 * df;
  const double b = 0.5;
  const double t2 = t * t;
  const double x = df / (df + t2);   // I_x(a, b) = 2 * upper tail
  const double y = t2 / (df + t2);   // 1 - x without cancellation
  const double log_x = std::log(df) - std::log(df + t2);
  const double log_y = t > 0.0 ? 2.0 * std::log(t) - std::log(df + t2)
                               : -std::numeric_limits<double>::infinity();
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return std::log(0.5) + log_ibeta_direct(a, b, x, log_x, log_y);
  }
  if (t == 0.0) return std::log(0.5);
  // I_x(a, b) = 1 - I_y(b, a)
  const double i_y = std::exp(log_ibeta_direct(b, a, y, log_y, log_x));
  return std::log(0.5) + std::log1p(-i_y);
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0 && b > 0.0)) throw std::domain_error("incomplete_beta: a, b must be positive");
  if (!(x >= 0.0 && x <= 1.0)) throw std::domain_error("incomplete_beta: x must lie in [0, 1]");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  const double log_x = std::log(x);
  const double log1m_x = std::log1p(-x);
  if (x < (a + 1.0) / (a + b + 2.0)) return std::exp(log_ibeta_direct(a, b, x, log_x, log1m_x));
  return 1.0 - std::exp(log_ibeta_direct(b, a, 1.0 - x, log1m_x, log_x));
}

double log_t_upper(double x, double df) {
  if (!(df > 0.0)) throw std::domain_error("log_t_upper: df must be positive");
  if (std::isnan(x)) throw std::domain_error("log_t_upper: x is NaN");
  if (x == std::numeric_limits<double>::infinity()) return -std::numeric_limits<double>::infinity();
  if (x >= 0.0) return log_t_upper_nonneg(x, df);
  if (x == -std::numeric_limits<double>::infinity()) return 0.0;
  return std::log1p(-std::exp(log_t_upper_nonneg(-x, df)));
}

double t_cdf(double x, int df) {
  if (df < 1) throw std::domain_error("t_cdf: df must be >= 1");
  if (std::isnan(x)) throw std::domain_error("t_cdf: x is NaN");
  if (x < 0.0) return std::exp(log_t_upper(-x, df));
  return -std::expm1(log_t_upper(x, df));
}

double normal_score_from_t(double t, double df) {
  if (t >= 0.0) return normal_quantile_log_upper(log_t_upper(t, df));
  return -normal_quantile_log_upper(log_t_upper(-t, df));
}

}  // namespace compop
