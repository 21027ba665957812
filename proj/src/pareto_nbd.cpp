#include "clv/pareto_nbd.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <tuple>

#include "clv/special.hpp"
#include "clv/spend_model.hpp"

namespace clv {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// log A0, where A0 is the difference of the two hypergeometric terms shared by
// the likelihood and P(alive). Returns -inf when t_x == T (A0 == 0).
double log_a0(const PnbdParams& p, int x, double t_x, double T) {
  const double rsx = p.r + p.s + x;
  // Keep the hypergeometric argument in [0, 1) by expanding around the
  // larger of alpha and beta.
  const bool alpha_major = p.alpha >= p.beta;
  const double major = alpha_major ? p.alpha : p.beta;
  const double minor = alpha_major ? p.beta : p.alpha;
  const double b = alpha_major ? p.s + 1.0 : p.r + x;
  const double l1 = log_hyp2f1(rsx, b, rsx + 1.0, (major - minor) / (major + t_x)) - rsx * std::log(major + t_x);
  const double l2 = log_hyp2f1(rsx, b, rsx + 1.0, (major - minor) / (major + T)) - rsx * std::log(major + T);
  if (!(l1 > l2)) return kNegInf;
  return l1 + std::log(-std::expm1(l2 - l1));
}

// log of (s / (r + s + x)) * (alpha + T)^(r + x) * (beta + T)^s * A0.
double log_dead_to_alive_ratio(const PnbdParams& p, const CustomerSummary& c) {
  const double la0 = log_a0(p, c.x, c.t_x, c.T);
  if (la0 == kNegInf) return kNegInf;
  return std::log(p.s / (p.r + p.s + c.x)) + (p.r + c.x) * std::log(p.alpha + c.T) + p.s * std::log(p.beta + c.T) + la0;
}

void check_summary(const CustomerSummary& c) {
  if (c.x < 0 || !(c.t_x >= 0.0) || !(c.T >= c.t_x) || !std::isfinite(c.T))
    throw DomainError("summary " + c.customer_id + ": need x >= 0 and 0 <= t_x <= T");
}

}  // namespace

void PnbdParams::validate() const {
  for (double v : {r, alpha, s, beta})
    if (!(v > 0.0) || !std::isfinite(v)) throw DomainError("Pareto/NBD parameters must be positive and finite");
}

double pnbd_loglik(const PnbdParams& p, const CustomerSummary& c) {
  p.validate();
  check_summary(c);
  const double x = c.x;
  const double head = log_gamma(p.r + x) - log_gamma(p.r) + p.r * std::log(p.alpha) + p.s * std::log(p.beta);
  const double alive_term = -(p.r + x) * std::log(p.alpha + c.T) - p.s * std::log(p.beta + c.T);
  const double la0 = log_a0(p, c.x, c.t_x, c.T);
  const double dead_term = la0 == kNegInf ? kNegInf : std::log(p.s / (p.r + p.s + x)) + la0;
  return head + log_add(alive_term, dead_term);
}

double pnbd_total_loglik(const PnbdParams& params, std::span<const CustomerSummary> summaries) {
  std::vector<double> terms(summaries.size());
  parallel_for(summaries.size(), [&](std::size_t i) { terms[i] = pnbd_loglik(params, summaries[i]); });
  return pairwise_sum(terms);
}

FitResult<PnbdParams> fit_pnbd(std::span<const CustomerSummary> summaries, const FitOptions& options) {
  std::size_t repeaters = 0;
  // Customers sharing (x, t_x, T) contribute identical terms.
  std::map<std::tuple<int, double, double>, double> groups;
  for (const auto& c : summaries) {
    check_summary(c);
    if (c.x >= 1) ++repeaters;
    groups[{c.x, c.t_x, c.T}] += 1.0;
  }
  if (repeaters < 2) throw DataError("Pareto/NBD fit needs at least two customers with repeat purchases");

  std::vector<CustomerSummary> keys;
  std::vector<double> counts;
  for (const auto& [key, n] : groups) {
    CustomerSummary c;
    std::tie(c.x, c.t_x, c.T) = key;
    keys.push_back(std::move(c));
    counts.push_back(n);
  }
  std::vector<double> terms(keys.size());
  auto objective = [&](const std::vector<double>& v) {
    const PnbdParams p{std::exp(v[0]), std::exp(v[1]), std::exp(v[2]), std::exp(v[3])};
    try {
      p.validate();
      parallel_for(keys.size(), [&](std::size_t i) { terms[i] = counts[i] * pnbd_loglik(p, keys[i]); });
    } catch (const Error&) {
      return kNegInf;
    }
    return pairwise_sum(terms);
  };
  const auto best = multi_start_maximize(objective, {0.0, 0.0, 0.0, 0.0}, options);

  FitResult<PnbdParams> out;
  out.params = {std::exp(best.x[0]), std::exp(best.x[1]), std::exp(best.x[2]), std::exp(best.x[3])};
  out.log_likelihood = best.value;
  out.iterations = best.evaluations;
  out.converged = best.converged && std::isfinite(best.value);
  out.restarts_used = best.restarts_used;
  return out;
}

double p_alive(const PnbdParams& p, const CustomerSummary& c) {
  p.validate();
  check_summary(c);
  const double lr = log_dead_to_alive_ratio(p, c);
  if (lr == kNegInf) return 1.0;
  // 1 / (1 + e^lr) without overflow.
  return lr > 0.0 ? std::exp(-lr) / (1.0 + std::exp(-lr)) : 1.0 / (1.0 + std::exp(lr));
}

double expected_transactions(const PnbdParams& p, const CustomerSummary& c, double horizon_days) {
  if (!(horizon_days >= 0.0)) throw DomainError("expected_transactions: horizon must be non-negative");
  if (horizon_days == 0.0) return 0.0;
  const double alive = p_alive(p, c);
  const double scale = (p.r + c.x) * (p.beta + c.T) / (p.alpha + c.T);
  const double log_ratio = std::log1p(horizon_days / (p.beta + c.T));  // log((β+T+t)/(β+T))
  double growth = 0.0;
  if (std::abs(p.s - 1.0) < 1e-6) {
    growth = log_ratio;
  } else {
    // [1 - ((β+T)/(β+T+t))^(s-1)] / (s - 1)
    growth = -std::expm1(-(p.s - 1.0) * log_ratio) / (p.s - 1.0);
  }
  return scale * growth * alive;
}

double expected_ltv(const PnbdParams& pnbd, const GgParams& gg, const CustomerSummary& c, double horizon_days) {
  const double n = expected_transactions(pnbd, c, horizon_days);
  if (n == 0.0) return 0.0;
  const double spend = c.x >= 1 && c.m_bar ? cond_expected_spend(gg, c.x, *c.m_bar) : gg.population_mean();
  return n * spend;
}

}  // namespace clv
