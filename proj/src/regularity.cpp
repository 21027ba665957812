#include "clv/regularity.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>
#include <tuple>

#include <boost/math/special_functions/beta.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>

#include "clv/special.hpp"

namespace clv {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

struct HistoryStats {
  int x = 0;
  double t_x = 0.0;
  double T = 0.0;
  double sum_log_gaps = 0.0;
};

HistoryStats history_stats(const CustomerSummary& c) {
  if (c.x < 0 || !(c.t_x >= 0.0) || !(c.T >= c.t_x) || !std::isfinite(c.T))
    throw DomainError("summary " + c.customer_id + ": need x >= 0 and 0 <= t_x <= T");
  if (static_cast<std::size_t>(c.x) != c.interarrivals.size())
    throw DataError("summary " + c.customer_id + ": interarrival sequence missing or inconsistent with x");
  HistoryStats h{c.x, c.t_x, c.T, 0.0};
  for (double g : c.interarrivals) {
    if (!(g > 0.0)) throw DataError("summary " + c.customer_id + ": zero-length interarrival");
    h.sum_log_gaps += std::log(g);
  }
  return h;
}

// log[(1 - ρ^k) + ρ^k Q(k, (kλ + μ) w)] with ρ = kλ / (kλ + μ): the dropout
// bracket divided by e^{-μ t_x}.
double log_residual_bracket(double lambda, double mu, double k, double w) {
  if (w == 0.0) return 0.0;
  const double theta = k * lambda;
  const double log_rho_k = -k * std::log1p(mu / theta);
  const double died = -std::expm1(log_rho_k);
  const double survived = std::exp(log_rho_k) * regularized_gamma_q(k, (theta + mu) * w);
  return std::log(died + survived);
}

// Σ_j log g(Δ_j; k, kλ) - kλ t_x-free part: x·(k log(kλ) - log Γ(k)) + (k - 1) Σ log Δ - kλ t_x.
double log_gap_density(double lambda, double k, double log_gamma_k, const HistoryStats& h) {
  return h.x * (k * std::log(k * lambda) - log_gamma_k) + (k - 1.0) * h.sum_log_gaps - k * lambda * h.t_x;
}

double bracket_gauss_legendre(double lambda, double mu, double k, double t_x, double T) {
  const double w = T - t_x;
  const double theta = k * lambda;
  double value = std::exp(-mu * T) * regularized_gamma_q(k, theta * w);
  if (w > 0.0) {
    const auto& rule = gauss_legendre(32);
    double integral = 0.0;
    for (std::size_t n = 0; n < rule.nodes.size(); ++n) {
      const double u = 0.5 * w * (rule.nodes[n] + 1.0);
      integral += rule.weights[n] * mu * std::exp(-mu * (t_x + u)) * regularized_gamma_q(k, theta * u);
    }
    value += 0.5 * w * integral;
  }
  return value;
}

double softplus(double y) { return y > 0.0 ? y + std::log1p(std::exp(-y)) : std::log1p(std::exp(y)); }

// Collapsed representation of one customer's mixed likelihood:
//   L = C · E[R],  alive numerator = C · E_alive,
// with λ | history-shape ~ Gamma(a, c), μ ~ Gamma(s, b) and U = gap ~ (c/k)·BetaPrime(k, a).
struct Collapsed {
  double log_c = 0.0;      // excludes (k - 1) Σ log Δ
  double log_er = 0.0;     // log E[R]
  double log_alive = 0.0;  // log of the alive share of E[R]
};

Collapsed collapse(const RegularityParams& p, int x, double t_x, double T) {
  const double k = p.k;
  const double a = p.r + k * x;
  const double c = p.alpha + k * t_x;
  const double b = p.beta + t_x;
  const double w = T - t_x;

  Collapsed out;
  out.log_c = -x * log_gamma(k) + k * x * std::log(k) + p.r * std::log(p.alpha) + log_gamma(a) - log_gamma(p.r) -
              a * std::log(c) + p.s * (std::log(p.beta) - std::log(b));
  if (w == 0.0) return out;

  // P(U > w) = I_{c/(c+kw)}(a, k).
  const double survival = boost::math::ibeta(a, k, c / (c + k * w));

  // ∫_{U <= w} [1 - (b / (b + U))^s] dH(U) in y = log(kU / c), where y has the
  // log-odds-of-beta density φ(y) = e^{ky} (1 + e^y)^{-(k+a)} / B(k, a).
  const double log_beta_fn = log_gamma(k) + log_gamma(a) - log_gamma(k + a);
  auto log_phi = [&](double y) { return k * y - (k + a) * softplus(y) - log_beta_fn; };
  const double log_cb = std::log(c / (k * b));
  const double y_mode = std::log(k / a);
  const double sigma = std::sqrt(boost::math::trigamma(k) + boost::math::trigamma(a));
  const double peak = log_phi(y_mode);
  constexpr double kDrop = 40.0;
  double left = sigma;
  while (log_phi(y_mode - left) > peak - kDrop && left < 1e6) left *= 2.0;
  double right = sigma;
  while (log_phi(y_mode + right) > peak - kDrop && right < 1e6) right *= 2.0;
  const double y_w = std::log(k * w / c);
  const double y_lo = y_mode - left;
  const double y_end = std::min(y_w, y_mode + right);

  double died_part = 0.0;
  if (y_end > y_lo) {
    const double t_lo = std::asinh((y_lo - y_mode) / sigma);
    const double t_hi = std::asinh((y_end - y_mode) / sigma);
    constexpr double kPanel = 0.6;
    const auto& rule = gauss_legendre(10);
    const int panels = std::max(1, static_cast<int>(std::ceil((t_hi - t_lo) / kPanel)));
    const double h = (t_hi - t_lo) / panels;
    for (int pi = 0; pi < panels; ++pi) {
      const double mid = t_lo + (pi + 0.5) * h;
      double acc = 0.0;
      for (std::size_t n = 0; n < rule.nodes.size(); ++n) {
        const double t = mid + 0.5 * h * rule.nodes[n];
        const double y = y_mode + sigma * std::sinh(t);
        const double f = -std::expm1(-p.s * std::log1p(std::exp(y + log_cb)));
        acc += rule.weights[n] * std::exp(log_phi(y)) * f * sigma * std::cosh(t);
      }
      died_part += 0.5 * h * acc;
    }
  }
  out.log_er = std::log(survival + died_part);
  out.log_alive = -p.s * std::log1p(w / b) + std::log(survival);
  return out;
}

}  // namespace

void RegularityParams::validate() const {
  for (double v : {r, alpha, s, beta, k})
    if (!(v > 0.0) || !std::isfinite(v)) throw DomainError("regularity parameters must be positive and finite");
}

QuadratureGrid::QuadratureGrid(std::size_t lambda_nodes, std::size_t mu_nodes, double tail) {
  if (lambda_nodes == 0 || mu_nodes == 0) throw DomainError("quadrature grid needs at least one node per axis");
  if (!(tail > 0.0 && tail < 0.5)) throw DomainError("quadrature tail must lie in (0, 0.5)");
  // Gauss-Legendre in t with u = 1 / (1 + e^{-π sinh t}): u reaches the
  // clipped tails at ±t_max and the endpoint behaviour of the mapped
  // integrand is flattened double-exponentially.
  auto build = [tail](std::size_t n, std::vector<double>& lower, std::vector<double>& upper, std::vector<double>& w) {
    const auto& rule = gauss_legendre(n);
    const double t_max = std::asinh(std::log((1.0 - tail) / tail) / std::numbers::pi);
    for (std::size_t i = 0; i < n; ++i) {
      const double t = t_max * rule.nodes[i];
      const double q = std::numbers::pi * std::sinh(t);
      const double lo = 1.0 / (1.0 + std::exp(-q));
      const double up = 1.0 / (1.0 + std::exp(q));
      lower.push_back(lo);
      upper.push_back(up);
      w.push_back(rule.weights[i] * t_max * std::numbers::pi * std::cosh(t) * lo * up);
    }
    const double total = std::accumulate(w.begin(), w.end(), 0.0);
    for (double& v : w) v /= total;
  };
  build(lambda_nodes, lambda_lower_, lambda_upper_, lambda_weights_);
  build(mu_nodes, mu_lower_, mu_upper_, mu_weights_);
}

namespace {

struct GammaMap {
  double shape = 1.0;
  double rate = 1.0;
};

// Gamma law matched in log λ to the mode and curvature of
// λ^{a-1} e^{-c λ} Q(k, k λ w).
GammaMap alive_lambda_map(double a, double c, double k, double w) {
  if (w == 0.0) return {a, c};
  if (k == 1.0) return {a, c + w};
  const double lgk = log_gamma(k);
  auto slope = [&](double y) {
    const double z = k * w * std::exp(y);
    const double eta = std::exp(std::log(z) + (k - 1.0) * std::log(z) - z - lgk - log_regularized_gamma_q(k, z));
    return a - c * std::exp(y) - eta;
  };
  double hi = std::log(a / c);  // slope(hi) <= 0
  double lo = hi - 1.0;
  while (slope(lo) <= 0.0 && lo > hi - 200.0) lo -= 1.0;
  for (int it = 0; it < 100 && hi - lo > 1e-10; ++it) {
    const double mid = 0.5 * (lo + hi);
    (slope(mid) > 0.0 ? lo : hi) = mid;
  }
  const double y = 0.5 * (lo + hi);
  constexpr double h = 1e-4;
  const double curvature = -(slope(y + h) - slope(y - h)) / (2.0 * h);
  // The integrand's left tail in log λ has slope a; the map must not be
  // lighter there or the clipped tail would hide mass.
  const double shape = std::clamp(curvature, 1e-3, a);
  return {shape, shape * std::exp(-y)};
}

}  // namespace

MixingNodes QuadratureGrid::nodes_for(const RegularityParams& p, const CustomerSummary& summary,
                                      MixingComponent component) const {
  p.validate();
  const double x = summary.x;
  const double a = p.r + p.k * x;
  const double c = p.alpha + p.k * summary.t_x;
  const bool alive = component == MixingComponent::kAlive;
  const GammaMap lm = alive ? alive_lambda_map(a, c, p.k, summary.T - summary.t_x) : GammaMap{a, c};
  const double mu_shape = alive ? p.s : p.s + 1.0;
  const double b = p.beta + (alive ? summary.T : summary.t_x);
  MixingNodes out;
  for (std::size_t i = 0; i < lambda_size(); ++i) {
    const double lambda = gamma_quantile(lm.shape, lm.rate, lambda_lower_[i], lambda_upper_[i]);
    out.lambda.push_back(lambda);
    if (!(lambda > 0.0) || !std::isfinite(lambda)) {
      out.log_weight_lambda.push_back(kNegInf);
      continue;
    }
    out.log_weight_lambda.push_back(std::log(lambda_weights_[i]) + gamma_log_density(lambda, p.r, p.alpha) -
                                    gamma_log_density(lambda, lm.shape, lm.rate));
  }
  for (std::size_t j = 0; j < mu_size(); ++j) {
    const double mu = gamma_quantile(mu_shape, b, mu_lower_[j], mu_upper_[j]);
    out.mu.push_back(mu);
    if (!(mu > 0.0) || !std::isfinite(mu)) {
      out.log_weight_mu.push_back(kNegInf);
      continue;
    }
    out.log_weight_mu.push_back(std::log(mu_weights_[j]) + gamma_log_density(mu, p.s, p.beta) -
                                gamma_log_density(mu, mu_shape, b));
  }
  return out;
}

double individual_loglik(double lambda, double mu, double k, const CustomerSummary& summary, DropoutIntegral method) {
  if (!(lambda > 0.0) || !(mu > 0.0) || !(k > 0.0)) throw DomainError("individual_loglik: λ, μ, k must be positive");
  const HistoryStats h = history_stats(summary);
  const double gaps = log_gap_density(lambda, k, log_gamma(k), h);
  if (method == DropoutIntegral::kGaussLegendre32) return gaps + std::log(bracket_gauss_legendre(lambda, mu, k, h.t_x, h.T));
  return gaps - mu * h.t_x + log_residual_bracket(lambda, mu, k, h.T - h.t_x);
}

namespace {

// log ∫_0^w μ e^{-μu} Ḡ(u) du, the dropout-in-(t_x, T] part of the bracket
// divided by e^{-μ t_x}.
double log_dropped_bracket(double lambda, double mu, double k, double w) {
  if (w == 0.0) return kNegInf;
  const double theta = k * lambda;
  if (k == 1.0) return std::log(mu / (theta + mu)) + std::log(-std::expm1(-(theta + mu) * w));
  const double log_rho_k = -k * std::log1p(mu / theta);
  const double v = -std::expm1(log_rho_k) + std::exp(log_rho_k) * regularized_gamma_q(k, (theta + mu) * w) -
                   std::exp(-mu * w + log_regularized_gamma_q(k, theta * w));
  return v > 0.0 ? std::log(v) : kNegInf;
}

struct GridTerms {
  std::vector<double> alive;    // log integrand × weight on the alive grid
  std::vector<double> dropped;  // same on the dropped grid
  MixingNodes alive_nodes;
  double log_alive = kNegInf;
  double log_dropped = kNegInf;
  double log_total = kNegInf;
};

GridTerms grid_terms(const RegularityParams& p, const CustomerSummary& summary, const QuadratureGrid& grid) {
  const HistoryStats h = history_stats(summary);
  const double lgk = log_gamma(p.k);
  const double w = h.T - h.t_x;
  GridTerms out;
  auto fill = [&](MixingComponent comp, std::vector<double>& terms) {
    MixingNodes nodes = grid.nodes_for(p, summary, comp);
    const std::size_t nm = nodes.mu.size();
    terms.assign(nodes.lambda.size() * nm, kNegInf);
    for (std::size_t i = 0; i < nodes.lambda.size(); ++i) {
      if (nodes.log_weight_lambda[i] == kNegInf) continue;
      const double lambda = nodes.lambda[i];
      const double gi = nodes.log_weight_lambda[i] + log_gap_density(lambda, p.k, lgk, h);
      const double alive_gap = comp == MixingComponent::kAlive ? log_regularized_gamma_q(p.k, p.k * lambda * w) : 0.0;
      for (std::size_t j = 0; j < nm; ++j) {
        if (nodes.log_weight_mu[j] == kNegInf) continue;
        const double mu = nodes.mu[j];
        const double base = gi + nodes.log_weight_mu[j];
        terms[i * nm + j] = comp == MixingComponent::kAlive
                                ? base - mu * h.T + alive_gap
                                : base - mu * h.t_x + log_dropped_bracket(lambda, mu, p.k, w);
      }
    }
    return nodes;
  };
  out.alive_nodes = fill(MixingComponent::kAlive, out.alive);
  out.log_alive = log_sum_exp(out.alive);
  if (w > 0.0) {
    fill(MixingComponent::kDropped, out.dropped);
    out.log_dropped = log_sum_exp(out.dropped);
  }
  out.log_total = log_add(out.log_alive, out.log_dropped);
  return out;
}

}  // namespace

double mixed_loglik(const RegularityParams& params, const CustomerSummary& summary, const QuadratureGrid& grid) {
  return grid_terms(params, summary, grid).log_total;
}

double mixed_loglik_fast(const RegularityParams& params, const CustomerSummary& summary) {
  params.validate();
  const HistoryStats h = history_stats(summary);
  const Collapsed c = collapse(params, h.x, h.t_x, h.T);
  return (params.k - 1.0) * h.sum_log_gaps + c.log_c + c.log_er;
}

double p_alive_k(const RegularityParams& params, const CustomerSummary& summary, const QuadratureGrid& grid) {
  const GridTerms terms = grid_terms(params, summary, grid);
  return std::clamp(std::exp(terms.log_alive - terms.log_total), 0.0, 1.0);
}

double p_alive_k_fast(const RegularityParams& params, const CustomerSummary& summary) {
  params.validate();
  const HistoryStats h = history_stats(summary);
  const Collapsed c = collapse(params, h.x, h.t_x, h.T);
  return std::clamp(std::exp(c.log_alive - c.log_er), 0.0, 1.0);
}

double pggg_total_loglik(const RegularityParams& params, std::span<const CustomerSummary> summaries) {
  std::vector<double> terms(summaries.size());
  parallel_for(summaries.size(), [&](std::size_t i) { terms[i] = mixed_loglik_fast(params, summaries[i]); });
  return pairwise_sum(terms);
}

PgggFitResult fit_pggg(std::span<const CustomerSummary> summaries, const FitOptions& options,
                       const PnbdParams* warm_start) {
  std::size_t repeaters = 0;
  double sum_log_gaps = 0.0;
  std::map<std::tuple<int, double, double>, double> groups;
  for (const auto& c : summaries) {
    const HistoryStats h = history_stats(c);
    if (h.x >= 1) ++repeaters;
    sum_log_gaps += h.sum_log_gaps;
    groups[{h.x, h.t_x, h.T}] += 1.0;
  }
  if (repeaters < 2) throw DataError("regularity fit needs at least two customers with repeat purchases");

  PgggFitResult out;
  out.warm_start = warm_start ? *warm_start : fit_pnbd(summaries, options).params;

  std::vector<std::tuple<int, double, double>> keys;
  std::vector<double> counts;
  for (const auto& [key, n] : groups) {
    keys.push_back(key);
    counts.push_back(n);
  }
  std::vector<double> terms(keys.size());
  auto total = [&](const RegularityParams& p) {
    parallel_for(keys.size(), [&](std::size_t i) {
      const auto [x, t_x, T] = keys[i];
      const Collapsed c = collapse(p, x, t_x, T);
      terms[i] = counts[i] * (c.log_c + c.log_er);
    });
    return pairwise_sum(terms) + (p.k - 1.0) * sum_log_gaps;
  };
  auto objective = [&](const std::vector<double>& v) {
    const RegularityParams p{std::exp(v[0]), std::exp(v[1]), std::exp(v[2]), std::exp(v[3]), std::exp(v[4])};
    try {
      p.validate();
      return total(p);
    } catch (const std::exception&) {
      return kNegInf;
    }
  };
  const PnbdParams& w = out.warm_start;
  out.warm_start_log_likelihood = total(RegularityParams::from_pnbd(w, 1.0));
  const auto best = multi_start_maximize(
      objective, {std::log(w.r), std::log(w.alpha), std::log(w.s), std::log(w.beta), 0.0}, options);
  out.params = {std::exp(best.x[0]), std::exp(best.x[1]), std::exp(best.x[2]), std::exp(best.x[3]),
                std::exp(best.x[4])};
  out.log_likelihood = best.value;
  out.iterations = best.evaluations;
  out.converged = best.converged && std::isfinite(best.value);
  out.restarts_used = best.restarts_used;
  return out;
}

ForecastResult forecast_mc(const RegularityParams& p, const CustomerSummary& summary, double horizon_days, int draws,
                           std::uint64_t seed, const QuadratureGrid& grid) {
  if (!(horizon_days >= 0.0)) throw DomainError("forecast_mc: horizon must be non-negative");
  if (draws < 1) throw DomainError("forecast_mc: need at least one draw");
  ForecastResult out;
  out.draws = draws;
  if (horizon_days == 0.0) return out;

  const GridTerms terms = grid_terms(p, summary, grid);
  const MixingNodes& nodes = terms.alive_nodes;
  const std::size_t mu_count = nodes.mu.size();
  const double alive_prob = std::exp(terms.log_alive - terms.log_total);
  std::vector<double> cdf(terms.alive.size());
  double acc = 0.0;
  for (std::size_t n = 0; n < cdf.size(); ++n) {
    acc += std::exp(terms.alive[n] - terms.log_alive);
    cdf[n] = acc;
  }
  const double w = summary.T - summary.t_x;

  Rng rng = substream(seed, stable_hash(summary.customer_id));
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::gamma_distribution<double> unit_gap(p.k, 1.0);  // scaled by 1/(kλ)
  double sum = 0.0, sum_sq = 0.0;
  for (int d = 0; d < draws; ++d) {
    double count = 0.0;
    if (unif(rng) < alive_prob) {
      const double u = unif(rng) * acc;
      const std::size_t cell =
          std::min<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin(), cdf.size() - 1);
      const double lambda = nodes.lambda[cell / mu_count];
      const double mu = nodes.mu[cell % mu_count];
      const double theta = p.k * lambda;
      // First future purchase: the current gap, conditioned on exceeding w.
      double gap = 0.0;
      const double tail = w > 0.0 ? regularized_gamma_q(p.k, theta * w) : 1.0;
      if (tail > 0.05) {
        do {
          gap = unit_gap(rng) / theta;
        } while (gap <= w);
      } else if (tail > 1e-280) {
        const double v = std::max(unif(rng), std::numeric_limits<double>::min());
        gap = std::max(boost::math::gamma_q_inv(p.k, v * tail) / theta, w);
      } else {
        // Far in the tail the hazard of Gamma(k, θ) is flat at θ.
        gap = w + std::exponential_distribution<double>(theta)(rng);
      }
      const double lifetime = std::exponential_distribution<double>(mu)(rng);
      double t = gap - w;
      while (t <= horizon_days && t < lifetime) {
        count += 1.0;
        t += unit_gap(rng) / theta;
      }
    }
    sum += count;
    sum_sq += count * count;
  }
  out.mean = sum / draws;
  const double var = draws > 1 ? std::max(0.0, (sum_sq - draws * out.mean * out.mean) / (draws - 1)) : 0.0;
  out.std_error = std::sqrt(var / draws);
  return out;
}

}  // namespace clv
