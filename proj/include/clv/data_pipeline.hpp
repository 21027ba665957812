#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "clv/common.hpp"

namespace clv {

struct Transaction {
  std::string customer_id;
  Date date;
  double amount = 0.0;
  bool coupon_used = false;
};

/// Optional declared date range of a dataset. Rows outside it are dropped and
/// counted; when absent, the observed range of the cleaned rows is used.
struct CleaningPolicy {
  std::optional<Date> min_date;
  std::optional<Date> max_date;
};

struct CleaningStats {
  std::size_t rows_read = 0;
  std::size_t merged_count = 0;       // rows folded into a same-day purchase
  std::size_t dropped_negative = 0;   // refunds / negative amounts
  std::size_t dropped_out_of_range = 0;
};

struct Dataset {
  std::vector<Transaction> transactions;  // sorted by (customer_id, date)
  CleaningStats stats;
  Date min_date;
  Date max_date;
};

/// Reads `customer_id,date,amount[,coupon]` CSV. Throws ParseError with the
/// offending line number for malformed content.
Dataset parse_transactions(const std::filesystem::path& path, const CleaningPolicy& policy = {});
/// Same cleaning rules applied to in-memory rows (any order).
Dataset clean_transactions(std::vector<Transaction> rows, const CleaningPolicy& policy = {});

struct SplitConfig {
  Date calibration_end;      // inclusive
  int holdout_days = 182;    // holdout = (calibration_end, calibration_end + holdout_days]
};

/// Throws DataError unless holdout_days > 0 and the holdout window ends on or
/// before dataset.max_date.
void validate_split(const Dataset& dataset, const SplitConfig& split);

struct CustomerSummary {
  std::string customer_id;
  int x = 0;           // repeat transactions in calibration
  double t_x = 0.0;    // days, first purchase to last calibration purchase
  double T = 0.0;      // days, first purchase to calibration end
  std::optional<double> m_bar;        // mean repeat spend; empty for x == 0
  std::vector<double> interarrivals;  // consecutive calibration gaps, days

  /// Throws DomainError if the summary invariants do not hold.
  void validate() const;
};

struct SummaryResult {
  std::vector<CustomerSummary> summaries;  // sorted by customer_id
  std::size_t excluded_count = 0;          // first purchase after calibration end
};

SummaryResult summarize(std::span<const Transaction> transactions, const SplitConfig& split);

inline constexpr std::size_t kFeatureCount = 7;

struct FeatureVector {
  double lifetime_duration = 0.0;
  double num_purchases = 0.0;
  double avg_gaps = 0.0;
  double avg_revenue = 0.0;
  double days_ago_first_buy = 0.0;
  double days_ago_last_buy = 0.0;
  double num_coupons = 0.0;

  std::array<double, kFeatureCount> values() const;
  static const std::array<const char*, kFeatureCount>& names();
};

/// Features of one customer's history as of `as_of`; only transactions on or
/// before `as_of` are used. Throws DataError if there are none.
FeatureVector make_features(std::span<const Transaction> customer_transactions, Date as_of);

struct FeatureRow {
  std::string customer_id;
  FeatureVector features;
};

/// Features for every customer whose first purchase is on or before `as_of`,
/// sorted by customer id.
std::vector<FeatureRow> make_feature_table(std::span<const Transaction> transactions, Date as_of);

struct HoldoutTarget {
  int count = 0;
  double revenue = 0.0;
};

/// Counts and revenue in the holdout window for every customer whose first
/// purchase is on or before calibration_end.
std::map<std::string, HoldoutTarget> holdout_targets(std::span<const Transaction> transactions,
                                                     const SplitConfig& split);

// Views over sorted transactions: [begin, end) index ranges per customer.
struct CustomerRange {
  std::size_t begin = 0;
  std::size_t end = 0;
};
std::vector<CustomerRange> group_by_customer(std::span<const Transaction> sorted);

}  // namespace clv
