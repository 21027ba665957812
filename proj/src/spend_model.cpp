#include "clv/spend_model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "clv/special.hpp"

namespace clv {

void GgParams::validate() const {
  for (double v : {p, q, gamma})
    if (!(v > 0.0) || !std::isfinite(v)) throw DomainError("Gamma-Gamma parameters must be positive and finite");
}

double GgParams::population_mean() const {
  validate();
  if (!(q > 1.0)) throw DomainError("Gamma-Gamma population mean requires q > 1");
  return p * gamma / (q - 1.0);
}

double gg_loglik(const GgParams& g, int x, double m_bar) {
  g.validate();
  if (x < 1) throw DomainError("gg_loglik requires x >= 1");
  if (!(m_bar > 0.0) || !std::isfinite(m_bar)) throw DomainError("gg_loglik requires m_bar > 0");
  const double px = g.p * x;
  return log_gamma(px + g.q) - log_gamma(px) - log_gamma(g.q) + g.q * std::log(g.gamma) + px * std::log(double(x)) +
         (px - 1.0) * std::log(m_bar) - (px + g.q) * std::log(g.gamma + x * m_bar);
}

GgFitResult fit_gg(std::span<const CustomerSummary> summaries, const FitOptions& options) {
  std::vector<int> xs;
  std::vector<double> ms;
  for (const auto& c : summaries) {
    if (c.x >= 1 && c.m_bar && *c.m_bar > 0.0) {
      xs.push_back(c.x);
      ms.push_back(*c.m_bar);
    }
  }
  if (xs.size() < 2) throw DataError("Gamma-Gamma fit needs at least two customers with repeat spend");

  GgFitResult out;
  out.params = {1.0, 2.0, 1.0};
  {
    const double n = static_cast<double>(xs.size());
    double mx = 0, mm = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      mx += xs[i] / n;
      mm += ms[i] / n;
    }
    double sxx = 0, smm = 0, sxm = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      sxx += (xs[i] - mx) * (xs[i] - mx);
      smm += (ms[i] - mm) * (ms[i] - mm);
      sxm += (xs[i] - mx) * (ms[i] - mm);
    }
    out.frequency_spend_correlation = sxx > 0 && smm > 0 ? sxm / std::sqrt(sxx * smm) : 0.0;
    out.correlation_warning = std::abs(out.frequency_spend_correlation) > 0.3;
    // Identical spends: the likelihood increases without bound as q -> inf.
    if (smm <= 1e-24 * mm * mm * n) {
      out.degenerate = true;
      out.converged = false;
      return out;
    }
  }

  std::vector<double> terms(xs.size());
  auto objective = [&](const std::vector<double>& v) {
    const GgParams g{std::exp(v[0]), std::exp(v[1]), std::exp(v[2])};
    try {
      g.validate();
      parallel_for(xs.size(), [&](std::size_t i) { terms[i] = gg_loglik(g, xs[i], ms[i]); });
    } catch (const Error&) {
      return -std::numeric_limits<double>::infinity();
    }
    return pairwise_sum(terms);
  };
  const auto best = multi_start_maximize(objective, {0.0, std::log(2.0), 0.0}, options);
  out.params = {std::exp(best.x[0]), std::exp(best.x[1]), std::exp(best.x[2])};
  out.log_likelihood = best.value;
  out.iterations = best.evaluations;
  out.converged = best.converged && std::isfinite(best.value);
  out.restarts_used = best.restarts_used;
  // Runaway log-parameters mean the optimum sits at the boundary.
  if (std::any_of(best.x.begin(), best.x.end(), [](double v) { return std::abs(v) > 30.0; })) {
    out.degenerate = true;
    out.converged = false;
  }
  if (out.params.q <= 1.0 + 1e-6)
    throw DataError("Gamma-Gamma fit reached q <= 1; the population mean spend is undefined");
  return out;
}

double cond_expected_spend(const GgParams& g, int x, double m_bar) {
  g.validate();
  const double population = g.population_mean();
  if (x == 0) return population;
  if (x < 0) throw DomainError("cond_expected_spend requires x >= 0");
  if (!(m_bar > 0.0)) throw DomainError("cond_expected_spend requires m_bar > 0 when x >= 1");
  const double px = g.p * x;
  const double denom = px + g.q - 1.0;
  const double w_bar = px / denom;
  return (1.0 - w_bar) * population + w_bar * m_bar;
}

}  // namespace clv
