#include "clv/special.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <sstream>

#include <boost/math/special_functions/gamma.hpp>

#include "clv/common.hpp"

namespace clv {

double log_gamma(double x) {
  int sign = 0;
  return ::lgamma_r(x, &sign);
}

double log_hyp2f1(double a, double b, double c, double z, int max_terms) {
  if (!(z >= 0.0 && z < 1.0)) {
    std::ostringstream msg;
    msg << "log_hyp2f1: argument z=" << z << " outside [0, 1)";
    throw DomainError(msg.str());
  }
  if (!(c > 0.0)) throw DomainError("log_hyp2f1: c must be positive");
  if (z == 0.0) return 0.0;

  // sum = scaled_sum * exp(log_scale); terms tracked as (log|t|, sign).
  double log_scale = 0.0;
  double scaled_sum = 1.0;
  double log_term = 0.0;
  double sign = 1.0;
  const double log_z = std::log(z);
  for (int n = 0; n < max_terms; ++n) {
    const double ratio = (a + n) * (b + n) / ((c + n) * (n + 1.0));
    if (ratio == 0.0) break;  // terminating series
    if (ratio < 0.0) sign = -sign;
    log_term += std::log(std::abs(ratio)) + log_z;
    if (log_term > log_scale) {
      scaled_sum *= std::exp(log_scale - log_term);
      log_scale = log_term;
    }
    const double scaled_term = sign * std::exp(log_term - log_scale);
    scaled_sum += scaled_term;
    if (std::abs(ratio * z) < 1.0 && std::abs(scaled_term) < 1e-12 * std::abs(scaled_sum)) {
      if (!(scaled_sum > 0.0)) break;
      return log_scale + std::log(scaled_sum);
    }
  }
  std::ostringstream msg;
  msg.precision(17);
  msg << "log_hyp2f1 did not converge for (a=" << a << ", b=" << b << ", c=" << c << ", z=" << z << ")";
  throw ConvergenceError(msg.str());
}

namespace {

constexpr double kGammaEps = 1e-15;
constexpr int kGammaMaxIter = 100'000;

// P(a, x) by series; valid (and used) for x < a + 1.
double gamma_p_series(double a, double x) {
  double ap = a;
  double del = 1.0 / a;
  double sum = del;
  for (int n = 0; n < kGammaMaxIter; ++n) {
    ap += 1.0;
    del *= x / ap;
    sum += del;
    if (std::abs(del) < std::abs(sum) * kGammaEps) {
      return sum * std::exp(-x + a * std::log(x) - log_gamma(a));
    }
  }
  throw ConvergenceError("regularized gamma series did not converge");
}

// log Q(a, x) by modified Lentz continued fraction; used for x >= a + 1.
double log_gamma_q_fraction(double a, double x) {
  constexpr double tiny = std::numeric_limits<double>::min() / kGammaEps;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i < kGammaMaxIter; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kGammaEps) {
      return -x + a * std::log(x) - log_gamma(a) + std::log(h);
    }
  }
  throw ConvergenceError("regularized gamma continued fraction did not converge");
}

}  // namespace

double regularized_gamma_q(double a, double x) {
  if (!(a > 0.0) || !(x >= 0.0)) throw DomainError("regularized_gamma_q: need a > 0, x >= 0");
  if (x == 0.0) return 1.0;
  if (std::isinf(x)) return 0.0;
  if (x < a + 1.0) return 1.0 - gamma_p_series(a, x);
  return std::exp(log_gamma_q_fraction(a, x));
}

double log_regularized_gamma_q(double a, double x) {
  if (!(a > 0.0) || !(x >= 0.0)) throw DomainError("log_regularized_gamma_q: need a > 0, x >= 0");
  if (x == 0.0) return 0.0;
  if (std::isinf(x)) return -std::numeric_limits<double>::infinity();
  if (x < a + 1.0) return std::log1p(-gamma_p_series(a, x));
  return log_gamma_q_fraction(a, x);
}

double regularized_gamma_p(double a, double x) {
  if (!(a > 0.0) || !(x >= 0.0)) throw DomainError("regularized_gamma_p: need a > 0, x >= 0");
  if (x == 0.0) return 0.0;
  if (std::isinf(x)) return 1.0;
  if (x < a + 1.0) return gamma_p_series(a, x);
  return -std::expm1(log_gamma_q_fraction(a, x));
}

double gamma_survival(double u, double shape, double rate) {
  if (!(u >= 0.0)) throw DomainError("gamma_survival: u must be non-negative");
  if (!(shape > 0.0) || !(rate > 0.0)) throw DomainError("gamma_survival: shape and rate must be positive");
  return regularized_gamma_q(shape, rate * u);
}

double gamma_log_density(double u, double shape, double rate) {
  return shape * std::log(rate) + (shape - 1.0) * std::log(u) - rate * u - log_gamma(shape);
}

double gamma_quantile(double shape, double rate, double lower, double upper) {
  const double unit = lower <= 0.5 ? boost::math::gamma_p_inv(shape, lower) : boost::math::gamma_q_inv(shape, upper);
  return unit / rate;
}

namespace {

QuadratureRule build_gauss_legendre(std::size_t n) {
  QuadratureRule rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  const std::size_t half = (n + 1) / 2;
  for (std::size_t i = 0; i < half; ++i) {
    double x = std::cos(std::numbers::pi * (static_cast<double>(i) + 0.75) / (static_cast<double>(n) + 0.5));
    double dp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0;
      double p1 = x;
      for (std::size_t k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / static_cast<double>(k);
        p0 = p1;
        p1 = p2;
      }
      if (n == 1) p0 = 1.0;
      dp = static_cast<double>(n) * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    // Recompute derivative at the converged root.
    double p0 = 1.0;
    double p1 = x;
    for (std::size_t k = 2; k <= n; ++k) {
      const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / static_cast<double>(k);
      p0 = p1;
      p1 = p2;
    }
    dp = n == 1 ? 1.0 : static_cast<double>(n) * (x * p1 - p0) / (x * x - 1.0);
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    rule.nodes[i] = -x;
    rule.nodes[n - 1 - i] = x;
    rule.weights[i] = w;
    rule.weights[n - 1 - i] = w;
  }
  if (n % 2 == 1) rule.nodes[n / 2] = 0.0;
  return rule;
}

}  // namespace

const QuadratureRule& gauss_legendre(std::size_t n) {
  static std::mutex mutex;
  static std::map<std::size_t, std::unique_ptr<QuadratureRule>> cache;
  std::lock_guard lock(mutex);
  auto& slot = cache[n];
  if (!slot) slot = std::make_unique<QuadratureRule>(build_gauss_legendre(n));
  return *slot;
}

double log_add(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

double log_sum_exp(std::span<const double> values) {
  double hi = -std::numeric_limits<double>::infinity();
  for (double v : values) hi = std::max(hi, v);
  if (!std::isfinite(hi)) return hi;
  double s = 0.0;
  for (double v : values) s += std::exp(v - hi);
  return hi + std::log(s);
}

}  // namespace clv
