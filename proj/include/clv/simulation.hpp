#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "clv/common.hpp"
#include "clv/data_pipeline.hpp"
#include "clv/regularity.hpp"
#include "clv/spend_model.hpp"

namespace clv {

struct SimConfig {
  int n_customers = 1000;
  int observation_days = 728;
  int holdout_days = 182;
  RegularityParams params{0.55, 10.6, 0.61, 11.7, 1.0};
  GgParams spend{6.0, 4.0, 15.0};
  double coupon_prob = 0.2;
  /// First purchases uniform over days [0, acquisition_window_days].
  int acquisition_window_days = 0;
  Date start_date = *parse_date("2018-07-04");
  std::uint64_t seed = 42;

  void validate() const;
  /// Last calibration day: start_date + observation_days - 1.
  Date calibration_end() const { return start_date + (observation_days - 1); }
  Date max_date() const { return calibration_end() + holdout_days; }
};

/// Flat `key = value` file; `#` starts a comment. Unknown keys are rejected.
SimConfig load_sim_config(const std::filesystem::path& path);

struct SimCustomer {
  double lambda = 0.0;        // purchase rate, 1/day
  double mu = 0.0;            // dropout rate, 1/day
  double dropout_time = 0.0;  // days after the first purchase
  double nu = 0.0;            // spend rate
  std::vector<double> times;  // purchase times, days after the first purchase (first is 0)
  std::vector<double> amounts;
  std::vector<bool> coupons;
};

/// One customer over [0, horizon_days) after their first purchase.
SimCustomer simulate_customer(const RegularityParams& params, const GgParams& spend, double horizon_days,
                              double coupon_prob, Rng& rng);

/// Exact continuous-time summary of the first `calibration_days` of a
/// simulated history.
CustomerSummary summarize_simulated(const SimCustomer& customer, double calibration_days, std::string id = {});

struct SimOutcome {
  int count = 0;
  double revenue = 0.0;
};
/// Purchases with time in [from, to).
SimOutcome simulated_window(const SimCustomer& customer, double from, double to);

struct GroundTruth {
  std::string customer_id;
  double lambda = 0.0;
  double mu = 0.0;
  double dropout_day = 0.0;  // days since start_date
  int true_holdout_count = 0;
  double true_holdout_revenue = 0.0;
};

struct SimCohort {
  std::vector<std::string> ids;
  std::vector<int> acquisition_day;
  std::vector<SimCustomer> customers;
  std::vector<Transaction> transactions;  // day resolution, cleaned and sorted
  std::vector<GroundTruth> truth;
};

/// Deterministic in config.seed; customer i draws from substream (seed, i).
SimCohort simulate_cohort(const SimConfig& config);

/// Writes transactions.csv, ground_truth.csv, cohort.json and the true
/// parameter documents into `out_dir`. Throws Error if it cannot write.
void write_cohort(const SimCohort& cohort, const SimConfig& config, const std::filesystem::path& out_dir);

}  // namespace clv
