#pragma once

#include <span>

#include "clv/data_pipeline.hpp"
#include "clv/optimize.hpp"

namespace clv {

/// Gamma-Gamma monetary model: each transaction value ~ Gamma(p, ν) (rate ν),
/// with ν ~ Gamma(q, gamma) (rate gamma) across customers.
struct GgParams {
  double p = 1.0;
  double q = 2.0;
  double gamma = 1.0;

  void validate() const;
  /// p·γ/(q−1); throws DomainError when q <= 1.
  double population_mean() const;
  friend bool operator==(const GgParams&, const GgParams&) = default;
};

/// log density of the mean repeat spend m̄ given x >= 1 repeat transactions.
double gg_loglik(const GgParams& params, int x, double m_bar);

struct GgFitResult : FitResult<GgParams> {
  /// True when the data cannot identify the model (e.g. identical spends).
  bool degenerate = false;
  /// Pearson correlation between x and m̄ over the fitted customers.
  double frequency_spend_correlation = 0.0;
  /// |correlation| > 0.3: the independence assumption is questionable.
  bool correlation_warning = false;
};

/// MLE over customers with x >= 1 and m̄ > 0, start (1, 2, 1) in log space.
/// Throws DataError with fewer than two eligible customers or when the
/// optimum has q <= 1 + 1e-6.
GgFitResult fit_gg(std::span<const CustomerSummary> summaries, const FitOptions& options = {});

/// Shrinkage estimate of the customer's mean transaction value.
double cond_expected_spend(const GgParams& params, int x, double m_bar);

}  // namespace clv
