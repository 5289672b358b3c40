#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <map>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

#include "compop/error.hpp"
#include "compop/numerics.hpp"

namespace compop {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kDegenerate = 1e-12;

// ---------------------------------------------------------------------------
// Bivariate normal upper orthant P(X > h, Y > k), Genz (2004) / TVPACK.
// ---------------------------------------------------------------------------

double bvn_upper(double h, double k, double r) {
  if (h == kInf || k == kInf) return 0.0;
  if (h == -kInf) return k == -kInf ? 1.0 : normal_upper(k);
  if (k == -kInf) return normal_upper(h);
  if (r == 0.0) return normal_upper(h) * normal_upper(k);

  static constexpr std::array<double, 3> w6{0.1713244923791705, 0.3607615730481384,
                                            0.4679139345726904};
  static constexpr std::array<double, 3> x6{0.9324695142031522, 0.6612093864662647,
                                            0.2386191860831970};
  static constexpr std::array<double, 6> w12{0.04717533638651177, 0.1069393259953183,
                                             0.1600783285433464,  0.2031674267230659,
                                             0.2334925365383547,  0.2491470458134029};
  static constexpr std::array<double, 6> x12{0.9815606342467191, 0.9041172563704750,
                                             0.7699026741943050, 0.5873179542866171,
                                             0.3678314989981802, 0.1252334085114692};
  static constexpr std::array<double, 10> w20{
      0.01761400713915212, 0.04060142980038694, 0.06267204833410906, 0.08327674157670475,
      0.1019301198172404,  0.1181945319615184,  0.1316886384491766,  0.1420961093183821,
      0.1491729864726037,  0.1527533871307259};
  static constexpr std::array<double, 10> x20{
      0.9931285991850949, 0.9639719272779138, 0.9122344282513259, 0.8391169718222188,
      0.7463319064601508, 0.6360536807265150, 0.5108670019508271, 0.3737060887154196,
      0.2277858511416451, 0.07652652113349733};

  const double* w;
  const double* x;
  int ng;
  if (std::fabs(r) < 0.3) {
    w = w6.data(); x = x6.data(); ng = 3;
  } else if (std::fabs(r) < 0.75) {
    w = w12.data(); x = x12.data(); ng = 6;
  } else {
    w = w20.data(); x = x20.data(); ng = 10;
  }

  constexpr double tp = 2.0 * std::numbers::pi;
  double hk = h * k;
  double bvn = 0.0;
  if (std::fabs(r) < 0.925) {
    const double hs = 0.5 * (h * h + k * k);
    const double asr = 0.5 * std::asin(r);
    for (int i = 0; i < ng; ++i) {
      for (double xi : {1.0 - x[i], 1.0 + x[i]}) {
        const double sn = std::sin(asr * xi);
        bvn += w[i] * std::exp((sn * hk - hs) / (1.0 - sn * sn));
      }
    }
    bvn = bvn * asr / tp + normal_upper(h) * normal_upper(k);
  } else {
    if (r < 0.0) {
      k = -k;
      hk = -hk;
    }
    if (std::fabs(r) < 1.0) {
      const double as = (1.0 - r) * (1.0 + r);
      double a = std::sqrt(as);
      const double bs = (h - k) * (h - k);
      const double c = (4.0 - hk) / 8.0;
      const double d = (12.0 - hk) / 80.0;
      double asr = -0.5 * (bs / as + hk);
      if (asr > -100.0) bvn = a * std::exp(asr) * (1.0 - c * (bs - as) * (1.0 - d * bs) / 3.0 + c * d * as * as);
      if (hk > -100.0) {
        const double b = std::sqrt(bs);
        const double sp = std::sqrt(tp) * normal_cdf(-b / a);
        bvn -= std::exp(-0.5 * hk) * sp * b * (1.0 - c * bs * (1.0 - d * bs) / 3.0);
      }
      a *= 0.5;
      double sum = 0.0;
      for (int i = 0; i < ng; ++i) {
        for (double xi : {1.0 - x[i], 1.0 + x[i]}) {
          const double xs = (a * xi) * (a * xi);
          asr = -0.5 * (bs / xs + hk);
          if (asr <= -100.0) continue;
          const double sp = 1.0 + c * xs * (1.0 + 5.0 * d * xs);
          const double rs = std::sqrt(1.0 - xs);
          const double ep = std::exp(-0.5 * hk * xs / ((1.0 + rs) * (1.0 + rs))) / rs;
          sum += w[i] * std::exp(asr) * (sp - ep);
        }
      }
      bvn = (a * sum - bvn) / tp;
    }
    if (r > 0.0) {
      bvn += normal_upper(std::max(h, k));
    } else if (h >= k) {
      bvn = -bvn;
    } else {
      const double l = h < 0.0 ? normal_cdf(k) - normal_cdf(h) : normal_upper(h) - normal_upper(k);
      bvn = l - bvn;
    }
  }
  return std::clamp(bvn, 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// Genz separation-of-variables integrand with variable prioritisation.
// ---------------------------------------------------------------------------

struct Transformed {
  std::size_t n = 0;
  Eigen::MatrixXd chol;  // lower triangular, zero diagonal for degenerate rows
  std::vector<double> lower, upper;
};

double truncated_mean(double a, double b) {
  const double p = normal_cdf(b) - normal_cdf(a);
  if (p > 1e-300) {
    const double pa = std::isfinite(a) ? normal_pdf(a) : 0.0;
    const double pb = std::isfinite(b) ? normal_pdf(b) : 0.0;
    return (pa - pb) / p;
  }
  if (!std::isfinite(a)) return b;
  if (!std::isfinite(b)) return a;
  return 0.5 * (a + b);
}

Transformed prioritised_cholesky(Eigen::MatrixXd c, std::vector<double> a, std::vector<double> b) {
  const std::size_t n = static_cast<std::size_t>(c.rows());
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(n, n);
  std::vector<double> y(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    // Pick the remaining variable with the smallest conditional interval
    // probability (Gibson, Glasbey and Elston).
    std::size_t best = i;
    double best_p = kInf;
    for (std::size_t j = i; j < n; ++j) {
      double s2 = c(j, j);
      double mu = 0.0;
      for (std::size_t k = 0; k < i; ++k) {
        s2 -= l(j, k) * l(j, k);
        mu += l(j, k) * y[k];
      }
      double p = 2.0;  // degenerate directions go last
      if (s2 > kDegenerate) {
        const double sd = std::sqrt(s2);
        p = normal_cdf((b[j] - mu) / sd) - normal_cdf((a[j] - mu) / sd);
      }
      if (p < best_p) {
        best_p = p;
        best = j;
      }
    }
    if (best != i) {
      std::swap(a[i], a[best]);
      std::swap(b[i], b[best]);
      c.row(i).swap(c.row(best));
      c.col(i).swap(c.col(best));
      l.row(i).swap(l.row(best));
    }
    double s2 = c(i, i);
    double mu = 0.0;
    for (std::size_t k = 0; k < i; ++k) {
      s2 -= l(i, k) * l(i, k);
      mu += l(i, k) * y[k];
    }
    if (s2 > kDegenerate) {
      const double d = std::sqrt(s2);
      l(i, i) = d;
      for (std::size_t j = i + 1; j < n; ++j) {
        double s = c(j, i);
        for (std::size_t k = 0; k < i; ++k) s -= l(j, k) * l(i, k);
        l(j, i) = s / d;
      }
      y[i] = truncated_mean((a[i] - mu) / d, (b[i] - mu) / d);
    } else {
      if (s2 < -1e-8) throw NumericError("mvn: correlation matrix is not positive semi-definite");
      l(i, i) = 0.0;
      y[i] = 0.0;
    }
  }
  return {n, std::move(l), std::move(a), std::move(b)};
}

double clamp_open(double u) {
  constexpr double lo = std::numeric_limits<double>::min();
  constexpr double hi = 1.0 - 0x1.0p-53;
  return std::clamp(u, lo, hi);
}

double genz_integrand(const Transformed& t, const double* w, std::vector<double>& y) {
  double prod = 1.0;
  for (std::size_t i = 0; i < t.n; ++i) {
    double mu = 0.0;
    for (std::size_t k = 0; k < i; ++k) mu += t.chol(i, k) * y[k];
    const double d = t.chol(i, i);
    if (d > 0.0) {
      const double lo = normal_cdf((t.lower[i] - mu) / d);
      const double hi = normal_cdf((t.upper[i] - mu) / d);
      prod *= hi - lo;
      if (prod <= 0.0) return 0.0;
      if (i + 1 < t.n) y[i] = normal_quantile(clamp_open(lo + w[i] * (hi - lo)));
    } else {
      if (mu <= t.lower[i] || mu > t.upper[i]) return 0.0;
      y[i] = 0.0;
    }
  }
  return prod;
}

bool is_prime(int v) {
  if (v < 2) return false;
  for (int d = 2; d * d <= v; ++d)
    if (v % d == 0) return false;
  return true;
}

MvnResult lattice_integrate(const Transformed& t, const MvnSettings& settings) {
  const std::size_t m = t.n > 0 ? t.n - 1 : 0;
  std::vector<double> gen(m);
  for (int p = 2, k = 0; static_cast<std::size_t>(k) < m; ++p) {
    if (!is_prime(p)) continue;
    const double s = std::sqrt(static_cast<double>(p));
    gen[k++] = s - std::floor(s);
  }

  constexpr int kShifts = 12;
  std::vector<double> y(t.n), w(std::max<std::size_t>(m, 1)), wa(std::max<std::size_t>(m, 1));
  std::vector<double> shift(m);

  MvnResult out;
  double estimate = 0.0;
  double variance = -1.0;
  std::int64_t points = 128;
  for (std::uint64_t iteration = 0;; ++iteration) {
    Philox rng = Philox::stream(settings.rng_seed, {0x6D766EULL, t.n, iteration});
    double mean = 0.0, m2 = 0.0;
    for (int s = 0; s < kShifts; ++s) {
      for (std::size_t k = 0; k < m; ++k) shift[k] = rng.uniform();
      double sum = 0.0;
      for (std::int64_t j = 1; j <= points; ++j) {
        for (std::size_t k = 0; k < m; ++k) {
          double x = static_cast<double>(j) * gen[k] + shift[k];
          x -= std::floor(x);
          w[k] = std::fabs(2.0 * x - 1.0);
          wa[k] = 1.0 - w[k];
        }
        sum += 0.5 * (genz_integrand(t, w.data(), y) + genz_integrand(t, wa.data(), y));
      }
      const double v = sum / static_cast<double>(points);
      const double delta = v - mean;
      mean += delta / (s + 1);
      m2 += delta * (v - mean);
    }
    out.evaluations += 2 * kShifts * points;
    const double var_mean = m2 / (kShifts - 1) / kShifts;
    if (variance < 0.0) {
      estimate = mean;
      variance = var_mean;
    } else if (variance + var_mean > 0.0) {
      estimate += (mean - estimate) * variance / (variance + var_mean);
      variance = variance * var_mean / (variance + var_mean);
    }
    const double error = 3.0 * std::sqrt(std::max(variance, 0.0));
    const std::int64_t next = 2 * kShifts * points * 2;
    if (error <= settings.abs_tolerance || out.evaluations + next > settings.max_evaluations) {
      out.value = std::clamp(estimate, 0.0, 1.0);
      out.error = error;
      out.converged = error <= settings.abs_tolerance;
      return out;
    }
    points *= 2;
  }
}

void check_finite_or_inf(std::span<const double> v, const char* what) {
  for (double x : v)
    if (std::isnan(x)) throw ValidationError(std::string("mvn: NaN in ") + what);
}

}  // namespace

// ---------------------------------------------------------------------------
// CorrelationMatrix
// ---------------------------------------------------------------------------

CorrelationMatrix::CorrelationMatrix(Eigen::MatrixXd entries) : m_(std::move(entries)) {
  if (m_.rows() == 0 || m_.rows() != m_.cols())
    throw ValidationError("correlation matrix must be square and non-empty");
  const auto n = m_.rows();
  std::vector<std::string> problems;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (std::fabs(m_(i, i) - 1.0) > 1e-9) problems.push_back("diagonal entry " + std::to_string(i) + " is not 1");
    m_(i, i) = 1.0;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      if (!std::isfinite(m_(i, j)) || std::fabs(m_(i, j) - m_(j, i)) > 1e-9)
        problems.push_back("entries (" + std::to_string(i) + "," + std::to_string(j) + ") not symmetric");
      const double v = 0.5 * (m_(i, j) + m_(j, i));
      if (std::fabs(v) > 1.0 + 1e-12)
        problems.push_back("entry (" + std::to_string(i) + "," + std::to_string(j) + ") outside [-1, 1]");
      m_(i, j) = m_(j, i) = std::clamp(v, -1.0, 1.0);
    }
  }
  if (!problems.empty()) throw ValidationError(problems);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m_, Eigen::EigenvaluesOnly);
  if (eig.eigenvalues().minCoeff() < -1e-10)
    throw NumericError("correlation matrix is not positive semi-definite (min eigenvalue " +
                       std::to_string(eig.eigenvalues().minCoeff()) + ")");
}

CorrelationMatrix CorrelationMatrix::identity(std::size_t dim) {
  return CorrelationMatrix(Eigen::MatrixXd::Identity(dim, dim));
}

CorrelationMatrix CorrelationMatrix::exchangeable(std::size_t dim, double rho) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Constant(dim, dim, rho);
  m.diagonal().setOnes();
  return CorrelationMatrix(std::move(m));
}

CorrelationMatrix CorrelationMatrix::restrict_to(std::span<const std::size_t> indices) const {
  Eigen::MatrixXd sub(indices.size(), indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i)
    for (std::size_t j = 0; j < indices.size(); ++j) sub(i, j) = m_(indices[i], indices[j]);
  return CorrelationMatrix(std::move(sub));
}

void MvnSettings::validate() const {
  std::vector<std::string> problems;
  if (!(abs_tolerance > 0.0)) problems.emplace_back("abs_tolerance must be positive");
  if (max_evaluations < 1000) problems.emplace_back("max_evaluations must be at least 1000");
  if (!problems.empty()) throw ValidationError(problems);
}

// ---------------------------------------------------------------------------
// Public entry points
// ---------------------------------------------------------------------------

double bivariate_normal_cdf(double a, double b, double r) {
  if (r >= 1.0) return normal_cdf(std::min(a, b));
  if (r <= -1.0) return std::max(0.0, normal_cdf(a) - normal_cdf(-b));
  return bvn_upper(-a, -b, r);
}

MvnResult mvn_rectangle(std::span<const double> lower, std::span<const double> upper,
                        const CorrelationMatrix& corr, const MvnSettings& settings) {
  settings.validate();
  if (lower.size() != corr.dim() || upper.size() != corr.dim())
    throw ValidationError("mvn: bound length does not match correlation dimension");
  check_finite_or_inf(lower, "lower");
  check_finite_or_inf(upper, "upper");

  // Drop unconstrained coordinates and fold perfectly (anti)correlated pairs
  // into a single coordinate before factorising.
  std::vector<std::size_t> keep;
  std::vector<double> a, b;
  for (std::size_t i = 0; i < corr.dim(); ++i) {
    if (lower[i] >= upper[i]) return {0.0, 0.0, 0, true};
    if (lower[i] == -kInf && upper[i] == kInf) continue;
    keep.push_back(i);
    a.push_back(lower[i]);
    b.push_back(upper[i]);
  }
  std::vector<bool> dropped(keep.size(), false);
  for (std::size_t i = 0; i < keep.size(); ++i) {
    if (dropped[i]) continue;
    for (std::size_t j = i + 1; j < keep.size(); ++j) {
      if (dropped[j]) continue;
      const double r = corr(keep[i], keep[j]);
      if (r >= 1.0 - kDegenerate) {
        a[i] = std::max(a[i], a[j]);
        b[i] = std::min(b[i], b[j]);
        dropped[j] = true;
      } else if (r <= -1.0 + kDegenerate) {
        a[i] = std::max(a[i], -b[j]);
        b[i] = std::min(b[i], -a[j]);
        dropped[j] = true;
      }
    }
    if (a[i] >= b[i]) return {0.0, 0.0, 0, true};
  }
  std::vector<std::size_t> idx;
  std::vector<double> lo, hi;
  for (std::size_t i = 0; i < keep.size(); ++i) {
    if (dropped[i]) continue;
    idx.push_back(keep[i]);
    lo.push_back(a[i]);
    hi.push_back(b[i]);
  }

  const std::size_t n = idx.size();
  if (n == 0) return {1.0, 0.0, 0, true};
  if (n == 1) return {std::max(0.0, normal_cdf(hi[0]) - normal_cdf(lo[0])), 0.0, 1, true};

  const CorrelationMatrix sub = corr.restrict_to(idx);
  if (n == 2 && settings.method == MvnMethod::kAuto) {
    const double r = sub(0, 1);
    auto f = [r](double x, double y) {
      if (x == -kInf || y == -kInf) return 0.0;
      return bivariate_normal_cdf(x, y, r);
    };
    const double p = f(hi[0], hi[1]) - f(lo[0], hi[1]) - f(hi[0], lo[1]) + f(lo[0], lo[1]);
    return {std::clamp(p, 0.0, 1.0), 0.0, 1, true};
  }
  const Transformed t = prioritised_cholesky(sub.matrix(), std::move(lo), std::move(hi));
  return lattice_integrate(t, settings);
}

MvnResult mvn_cdf(std::span<const double> upper, const CorrelationMatrix& corr,
                  const MvnSettings& settings) {
  const std::vector<double> lower(upper.size(), -kInf);
  return mvn_rectangle(lower, upper, corr, settings);
}

// Stopping rule in probability units; QMC noise makes tighter targets moot.
constexpr double kRootTolerance = 1e-6;
// Accuracy of the cheap evaluations that locate the root before refinement.
constexpr double kCoarseTolerance = 1e-4;

namespace {

// Illinois regula falsi on g(c) = -Phi^-1(exceedance(c)) - (-Phi^-1(alpha)),
// which is close to linear in c, with a bisection step whenever the bracket
// fails to halve over three iterations. Stops when the exceedance is within
// `tol` of alpha. `lo`/`hi` must bracket the root.
double illinois(const std::function<double(double)>& exceedance, double alpha, double lo, double hi, double tol) {
  const double target = -normal_quantile(alpha);
  auto g = [&](double c, double& ex) {
    ex = exceedance(c);
    return -normal_quantile(std::clamp(ex, 1e-300, 1.0 - 1e-16)) - target;
  };
  double ex = 0.0;
  double glo = g(lo, ex), ghi = g(hi, ex);
  int side = 0;
  double c = 0.5 * (lo + hi);
  for (int it = 0; it < 200; ++it) {
    const double width = hi - lo;
    c = (lo * ghi - hi * glo) / (ghi - glo);
    if (!(c > lo && c < hi)) c = 0.5 * (lo + hi);
    const double gc = g(c, ex);
    if (std::fabs(ex - alpha) <= tol || width < 1e-12) break;
    if (gc < 0.0) {
      lo = c;
      glo = gc;
      if (side == -1) ghi *= 0.5;
      side = -1;
    } else {
      hi = c;
      ghi = gc;
      if (side == 1) glo *= 0.5;
      side = 1;
    }
    if (hi - lo > 0.5 * width && it % 3 == 2) {
      const double mid = 0.5 * (lo + hi);
      const double gm = g(mid, ex);
      if (std::fabs(ex - alpha) <= tol) return mid;
      (gm < 0.0 ? lo : hi) = mid;
      (gm < 0.0 ? glo : ghi) = gm;
      side = 0;
    }
  }
  return c;
}

}  // namespace

double equicoordinate_upper(const CorrelationMatrix& corr, double alpha, const MvnSettings& settings) {
  if (!(alpha > 0.0 && alpha < 0.5)) throw ValidationError("equicoordinate_upper: alpha must lie in (0, 0.5)");
  const std::size_t n = corr.dim();
  if (n == 1) return normal_quantile(1.0 - alpha);

  // Memoized: the bracket and the root search revisit the same points.
  auto exceedance_with = [&](const MvnSettings& s) {
    return [&corr, s, n, memo = std::map<double, double>{}](double c) mutable {
      if (auto it = memo.find(c); it != memo.end()) return it->second;
      const std::vector<double> u(n, c);
      return memo[c] = 1.0 - mvn_cdf(u, corr, s).value;
    };
  };
  MvnSettings coarse = settings;
  coarse.abs_tolerance = std::max(settings.abs_tolerance, kCoarseTolerance);
  std::function<double(double)> rough = exceedance_with(coarse);
  std::function<double(double)> fine = exceedance_with(settings);

  // Bracket [0, 10], widened if needed.
  double lo = 0.0, hi = 10.0;
  while (rough(lo) < alpha && lo > -40.0) {
    hi = lo;
    lo -= 10.0;
  }
  while (rough(hi) > alpha && hi < 40.0) {
    lo = hi;
    hi *= 2.0;
  }
  if (rough(lo) < alpha || rough(hi) > alpha)
    throw NumericError("equicoordinate_upper: could not bracket the critical value");

  const double guess = illinois(rough, alpha, lo, hi, kCoarseTolerance);
  if (coarse.abs_tolerance == settings.abs_tolerance) return guess;

  // Refine at full accuracy inside a small bracket around the rough root.
  double step = 0.004;
  double flo = guess - step, fhi = guess + step;
  for (int k = 0; k < 60 && (fine(flo) < alpha || fine(fhi) > alpha); ++k) {
    step *= 2.0;
    flo = std::max(lo, guess - step);
    fhi = std::min(hi, guess + step);
  }
  return illinois(fine, alpha, flo, fhi, kRootTolerance);
}

}  // namespace compop
