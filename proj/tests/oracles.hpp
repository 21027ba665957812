#pragma once

// Independent reference implementations used as test oracles. Nothing here
// calls into the library's numerical kernels.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/multiprecision/cpp_bin_float.hpp>

namespace clv::oracle {

using Big = boost::multiprecision::cpp_bin_float_50;

/// 2F1(a, b; c; z) by direct summation in 50 significant digits.
inline Big hyp2f1_series(double a, double b, double c, double z) {
  Big term = 1, sum = 1;
  for (int n = 0; n < 1'000'000; ++n) {
    term *= (Big(a) + n) * (Big(b) + n) / ((Big(c) + n) * (n + 1)) * Big(z);
    sum += term;
    if (n > 10 && abs(term) < abs(sum) * Big("1e-45")) break;
  }
  return sum;
}

/// Pareto/NBD individual likelihood at known (λ, μ).
inline double pnbd_individual(double lambda, double mu, int x, double t_x, double T) {
  const double lm = lambda + mu;
  return std::pow(lambda, x) * (lambda / lm * std::exp(-lm * T) + mu / lm * std::exp(-lm * t_x));
}

inline double gamma_density(double v, double shape, double rate) {
  return std::exp(shape * std::log(rate) + (shape - 1) * std::log(v) - rate * v - std::lgamma(shape));
}

/// ∬ L(λ, μ) dGamma(λ; r, α) dGamma(μ; s, β) by nested adaptive Gauss-Kronrod.
inline double pnbd_likelihood_by_quadrature(double r, double alpha, double s, double beta, int x, double t_x,
                                            double T) {
  using boost::math::quadrature::gauss_kronrod;
  auto inner = [&](double lambda) {
    auto f = [&](double mu) { return pnbd_individual(lambda, mu, x, t_x, T) * gamma_density(mu, s, beta); };
    return gauss_kronrod<double, 61>::integrate(f, 0.0, std::numeric_limits<double>::infinity(), 15, 1e-13);
  };
  auto outer = [&](double lambda) { return inner(lambda) * gamma_density(lambda, r, alpha); };
  return gauss_kronrod<double, 61>::integrate(outer, 0.0, std::numeric_limits<double>::infinity(), 15, 1e-12);
}

struct Profile {
  int x = 0;
  double t_x = 0.0;
  double T = 0.0;
};

struct PosteriorSample {
  std::size_t accepted = 0;
  std::size_t simulated = 0;
  double alive_fraction = 0.0;
  double mean_future = 0.0;
  double future_std_error = 0.0;
};

/// Rejection sampler: draws customers from the generative process, keeps those
/// whose calibration history has exactly x repeats and last repeat within
/// ±tolerance of t_x by T, and reports the share still alive at T and the mean
/// number of purchases in (T, T + horizon].
inline PosteriorSample rejection_posterior(double r, double alpha, double s, double beta, double k, Profile target,
                                           double tolerance, double horizon, std::size_t accept_target,
                                           std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::gamma_distribution<double> lambda_dist(r, 1.0 / alpha), mu_dist(s, 1.0 / beta), unit_gap(k, 1.0);
  std::exponential_distribution<double> unit_exp(1.0);
  PosteriorSample out;
  double alive = 0, sum = 0, sum_sq = 0;
  while (out.accepted < accept_target) {
    ++out.simulated;
    const double lambda = lambda_dist(rng);
    const double mu = mu_dist(rng);
    const double death = unit_exp(rng) / mu;
    const double gap_scale = 1.0 / (k * lambda);
    double t = 0.0, last = 0.0;
    int repeats = 0;
    bool rejected = false;
    while (true) {
      t += unit_gap(rng) * gap_scale;
      if (t > target.T || t >= death) break;
      last = t;
      if (++repeats > target.x) {
        rejected = true;
        break;
      }
    }
    if (rejected || repeats != target.x || std::abs(last - target.t_x) > tolerance) continue;
    ++out.accepted;
    int future = 0;
    if (death > target.T) {
      alive += 1;
      while (t <= target.T + horizon && t < death) {
        ++future;
        t += unit_gap(rng) * gap_scale;
      }
    }
    sum += future;
    sum_sq += double(future) * future;
  }
  const double n = static_cast<double>(out.accepted);
  out.alive_fraction = alive / n;
  out.mean_future = sum / n;
  out.future_std_error = std::sqrt(std::max(0.0, sum_sq / n - out.mean_future * out.mean_future) / n);
  return out;
}

}  // namespace clv::oracle
