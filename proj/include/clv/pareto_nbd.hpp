#pragma once

#include <span>

#include "clv/data_pipeline.hpp"
#include "clv/optimize.hpp"

namespace clv {

struct GgParams;

/// Population parameters of the Pareto/NBD model: purchase rate
/// λ ~ Gamma(r, alpha) and dropout rate μ ~ Gamma(s, beta), rates per day.
struct PnbdParams {
  double r = 1.0;
  double alpha = 1.0;
  double s = 1.0;
  double beta = 1.0;

  /// Throws DomainError unless all four are positive and finite.
  void validate() const;
  friend bool operator==(const PnbdParams&, const PnbdParams&) = default;
};

/// Individual-customer log-likelihood log L(r, α, s, β | x, t_x, T).
double pnbd_loglik(const PnbdParams& params, const CustomerSummary& summary);

/// Σ pnbd_loglik over customers; summation order is fixed (pairwise tree
/// over customers in input order) independent of thread count.
double pnbd_total_loglik(const PnbdParams& params, std::span<const CustomerSummary> summaries);

/// Maximum likelihood by Nelder-Mead over log-parameters, default start
/// (1, 1, 1, 1). Throws DataError unless at least two customers have x >= 1.
FitResult<PnbdParams> fit_pnbd(std::span<const CustomerSummary> summaries, const FitOptions& options = {});

/// Posterior probability that the customer has not dropped out by T.
double p_alive(const PnbdParams& params, const CustomerSummary& summary);

/// Expected number of transactions in (T, T + horizon_days].
double expected_transactions(const PnbdParams& params, const CustomerSummary& summary, double horizon_days);

/// Expected revenue over the horizon: expected transactions times the
/// conditional expected spend (population mean spend when x = 0).
double expected_ltv(const PnbdParams& pnbd, const GgParams& gg, const CustomerSummary& summary, double horizon_days);

}  // namespace clv
