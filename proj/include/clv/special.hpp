#pragma once

#include <cstddef>
#include <span>
#include <vector>

// Numerical kernels shared by the probabilistic models.

namespace clv {

/// log Γ(x) for x > 0 (thread-safe; no global sign state).
double log_gamma(double x);

/// log of the Gaussian hypergeometric series 2F1(a, b; c; z) for z in [0, 1).
///
/// The series is accumulated term by term in log space, rescaled against the
/// running maximum term, and stops once the next term contributes less than
/// 1e-12 of the partial sum. Throws DomainError for z outside [0, 1) or
/// c <= 0, ConvergenceError after `max_terms` terms, or if the partial sum
/// is not positive.
double log_hyp2f1(double a, double b, double c, double z, int max_terms = 10'000);

/// Upper regularized incomplete gamma Q(a, x) = Γ(a, x) / Γ(a).
/// Series below x < a + 1, Lentz continued fraction above.
double regularized_gamma_q(double a, double x);
/// log Q(a, x), accurate where Q itself underflows.
double log_regularized_gamma_q(double a, double x);
/// Lower regularized incomplete gamma P(a, x) = 1 - Q(a, x).
double regularized_gamma_p(double a, double x);

/// Survival function of Gamma(shape, rate) at u: Q(shape, rate * u).
double gamma_survival(double u, double shape, double rate);
/// log density of Gamma(shape, rate) at u > 0.
double gamma_log_density(double u, double shape, double rate);
/// Quantile of Gamma(shape, rate); `lower` and `upper` are p and 1 - p, both
/// supplied so that either tail can be inverted without cancellation.
double gamma_quantile(double shape, double rate, double lower, double upper);

/// Gauss-Legendre rule on [-1, 1].
struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

/// Cached, thread-safe; nodes ascending.
const QuadratureRule& gauss_legendre(std::size_t n);

double log_add(double a, double b);
double log_sum_exp(std::span<const double> values);

}  // namespace clv
