#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "compop/numerics.hpp"

namespace compop {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kLogSqrt2Pi = 0.91893853320467274178;

// Mills ratio (1 - Phi(x)) / phi(x) for x >= 5 by backward evaluation of the
// Laplace continued fraction 1/(x + 1/(x + 2/(x + 3/(x + ...)))).
double mills_ratio_tail(double x) {
  double t = x;
  for (int k = 120; k >= 1; --k) t = x + k / t;
  return 1.0 / t;
}

double mills_ratio(double x) {
  if (x >= 5.0) return mills_ratio_tail(x);
  return normal_upper(x) / normal_pdf(x);
}

// Wichura (1988), algorithm AS 241 (PPND16).
double ppnd16(double p) {
  const double q = p - 0.5;
  if (std::fabs(q) <= 0.425) {
    const double r = 0.180625 - q * q;
    const double num =
        (((((((2.5090809287301226727e+3 * r + 3.3430575583588128105e+4) * r +
              6.7265770927008700853e+4) * r + 4.5921953931549871457e+4) * r +
            1.3731693765509461125e+4) * r + 1.9715909503065514427e+3) * r +
          1.3314166789178437745e+2) * r + 3.3871328727963666080e+0);
    const double den =
        (((((((5.2264952788528545610e+3 * r + 2.8729085735721942674e+4) * r +
              3.9307895800092710610e+4) * r + 2.1213794301586595867e+4) * r +
            5.3941960214247511077e+3) * r + 6.8718700749205790830e+2) * r +
          4.2313330701600911252e+1) * r + 1.0);
    return q * num / den;
  }
  double r = q < 0.0 ? p : 1.0 - p;
  r = std::sqrt(-std::log(r));
  double val;
  if (r <= 5.0) {
    r -= 1.6;
    const double num =
        (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r +
              2.41780725177450611770e-1) * r + 1.27045825245236838258e+0) * r +
            3.64784832476320460504e+0) * r + 5.76949722146069140550e+0) * r +
          4.63033784615654529590e+0) * r + 1.42343711074968357734e+0);
    const double den =
        (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r +
              1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r +
            6.89767334985100004550e-1) * r + 1.67638483018380384940e+0) * r +
          2.05319162663775882187e+0) * r + 1.0);
    val = num / den;
  } else {
    r -= 5.0;
    const double num =
        (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r +
              1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r +
            2.96560571828504891230e-1) * r + 1.78482653991729133580e+0) * r +
          5.46378491116411436990e+0) * r + 6.65790464350110377720e+0);
    const double den =
        (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r +
              1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r +
            1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r +
          5.99832206555887937690e-1) * r + 1.0);
    val = num / den;
  }
  return q < 0.0 ? -val : val;
}

}  // namespace

double normal_cdf(double x) { return 0.5 * std::erfc(-x * kInvSqrt2); }

double normal_upper(double x) { return 0.5 * std::erfc(x * kInvSqrt2); }

double normal_pdf(double x) { return std::exp(-0.5 * x * x - kLogSqrt2Pi); }

double log_normal_upper(double x) {
  if (x < 5.0) return std::log(normal_upper(x));
  return -0.5 * x * x - kLogSqrt2Pi + std::log(mills_ratio_tail(x));
}

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw std::domain_error("normal_quantile: p must lie in (0, 1)");
  return ppnd16(p);
}

double normal_quantile_log_upper(double log_q) {
  if (std::isnan(log_q) || log_q > 0.0)
    throw std::domain_error("normal_quantile_log_upper: log_q must be <= 0");
  if (log_q == 0.0) return -std::numeric_limits<double>::infinity();
  if (log_q > -700.0) {
    const double q = std::exp(log_q);
    return q < 1.0 ? -ppnd16(q) : -std::numeric_limits<double>::infinity();
  }
  // Asymptotic start, then Newton on log(1 - Phi(z)) - log_q.
  const double s = -2.0 * log_q;
  double z = std::sqrt(s - std::log(s) - std::log(2.0 * std::numbers::pi));
  for (int it = 0; it < 8; ++it) {
    const double g = log_normal_upper(z) - log_q;
    const double step = g * mills_ratio(z);
    z += step;
    if (std::fabs(step) < 1e-15 * z) break;
  }
  return z;
}

double standard_normal(Philox& rng) { return ppnd16(rng.uniform()); }

double gamma_variate(Philox& rng, double shape) {
  if (!(shape > 0.0)) throw std::domain_error("gamma_variate: shape must be positive");
  if (shape < 1.0) {
    const double g = gamma_variate(rng, shape + 1.0);
    return g * std::pow(rng.uniform(), 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = standard_normal(rng);
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = rng.uniform();
    const double x2 = x * x;
    if (u < 1.0 - 0.0331 * x2 * x2) return d * v;
    if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return d * v;
  }
}

}  // namespace compop
