#include "clv/data_pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace clv {

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    std::string_view field = line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
    while (!field.empty() && (field.front() == ' ' || field.front() == '"')) field.remove_prefix(1);
    while (!field.empty() && (field.back() == ' ' || field.back() == '"' || field.back() == '\r')) field.remove_suffix(1);
    out.push_back(field);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace

Dataset parse_transactions(const std::filesystem::path& path, const CleaningPolicy& policy) {
  std::ifstream in(path);
  if (!in) throw ParseError(ParseErrorKind::kUnreadableFile, 0, "cannot read transactions file '" + path.string() + "'");

  std::string line;
  if (!std::getline(in, line))
    throw ParseError(ParseErrorKind::kMissingColumn, 1, "missing header in '" + path.string() + "'");
  const auto header = split_fields(line);
  auto column = [&](std::string_view name) -> std::optional<std::size_t> {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    return std::nullopt;
  };
  const auto id_col = column("customer_id");
  const auto date_col = column("date");
  const auto amount_col = column("amount");
  const auto coupon_col = column("coupon");
  for (auto [col, name] : {std::pair{id_col, "customer_id"}, {date_col, "date"}, {amount_col, "amount"}}) {
    if (!col) throw ParseError(ParseErrorKind::kMissingColumn, 1, std::string("missing required column '") + name + "'");
  }

  std::vector<Transaction> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto fields = split_fields(line);
    const std::size_t needed = std::max({*id_col, *date_col, *amount_col, coupon_col.value_or(0)}) + 1;
    if (fields.size() < needed)
      throw ParseError(ParseErrorKind::kMalformedRow, line_no, "expected " + std::to_string(header.size()) + " fields");
    Transaction t;
    t.customer_id = std::string(fields[*id_col]);
    if (t.customer_id.empty()) throw ParseError(ParseErrorKind::kMalformedRow, line_no, "empty customer_id");
    const auto date = parse_date(fields[*date_col]);
    if (!date)
      throw ParseError(ParseErrorKind::kMalformedDate, line_no, "malformed date '" + std::string(fields[*date_col]) + "'");
    t.date = *date;
    const auto amount = parse_double(fields[*amount_col]);
    if (!amount || !std::isfinite(*amount))
      throw ParseError(ParseErrorKind::kMalformedNumber, line_no,
                       "malformed amount '" + std::string(fields[*amount_col]) + "'");
    t.amount = *amount;
    if (coupon_col) {
      const auto flag = fields[*coupon_col];
      if (flag == "1" || flag == "true") {
        t.coupon_used = true;
      } else if (flag == "0" || flag == "false" || flag.empty()) {
        t.coupon_used = false;
      } else {
        throw ParseError(ParseErrorKind::kMalformedRow, line_no, "coupon flag must be 0 or 1");
      }
    }
    rows.push_back(std::move(t));
  }
  return clean_transactions(std::move(rows), policy);
}

Dataset clean_transactions(std::vector<Transaction> rows, const CleaningPolicy& policy) {
  Dataset out;
  out.stats.rows_read = rows.size();
  std::vector<Transaction> kept;
  kept.reserve(rows.size());
  for (auto& t : rows) {
    if (t.amount < 0.0) {
      ++out.stats.dropped_negative;
      continue;
    }
    if ((policy.min_date && t.date < *policy.min_date) || (policy.max_date && t.date > *policy.max_date)) {
      ++out.stats.dropped_out_of_range;
      continue;
    }
    kept.push_back(std::move(t));
  }
  std::stable_sort(kept.begin(), kept.end(), [](const Transaction& a, const Transaction& b) {
    if (a.customer_id != b.customer_id) return a.customer_id < b.customer_id;
    return a.date < b.date;
  });
  for (auto& t : kept) {
    if (!out.transactions.empty() && out.transactions.back().customer_id == t.customer_id &&
        out.transactions.back().date == t.date) {
      out.transactions.back().amount += t.amount;
      out.transactions.back().coupon_used = out.transactions.back().coupon_used || t.coupon_used;
      ++out.stats.merged_count;
    } else {
      out.transactions.push_back(std::move(t));
    }
  }
  if (!out.transactions.empty()) {
    auto [lo, hi] = std::minmax_element(out.transactions.begin(), out.transactions.end(),
                                        [](const Transaction& a, const Transaction& b) { return a.date < b.date; });
    out.min_date = lo->date;
    out.max_date = hi->date;
  }
  if (policy.min_date) out.min_date = *policy.min_date;
  if (policy.max_date) out.max_date = *policy.max_date;
  return out;
}

void validate_split(const Dataset& dataset, const SplitConfig& split) {
  if (split.holdout_days <= 0) throw DataError("holdout_days must be positive");
  const Date holdout_end = split.calibration_end + split.holdout_days;
  if (holdout_end > dataset.max_date)
    throw DataError("holdout window ends " + format_date(holdout_end) + ", after the dataset's last date " +
                    format_date(dataset.max_date));
}

void CustomerSummary::validate() const {
  if (x < 0 || static_cast<std::size_t>(x) != interarrivals.size())
    throw DomainError("summary " + customer_id + ": x must equal the number of interarrivals");
  if (!(t_x >= 0.0) || !(T >= t_x) || !std::isfinite(T))
    throw DomainError("summary " + customer_id + ": need 0 <= t_x <= T");
  if (x == 0 && t_x != 0.0) throw DomainError("summary " + customer_id + ": t_x must be 0 when x = 0");
  if (x > 0) {
    const double total = std::accumulate(interarrivals.begin(), interarrivals.end(), 0.0);
    if (std::abs(total - t_x) > 1e-9 * std::max(1.0, t_x))
      throw DomainError("summary " + customer_id + ": interarrivals must sum to t_x");
  }
}

std::vector<CustomerRange> group_by_customer(std::span<const Transaction> sorted) {
  std::vector<CustomerRange> out;
  std::size_t i = 0;
  while (i < sorted.size()) {
    std::size_t j = i + 1;
    while (j < sorted.size() && sorted[j].customer_id == sorted[i].customer_id) ++j;
    out.push_back({i, j});
    i = j;
  }
  return out;
}

SummaryResult summarize(std::span<const Transaction> transactions, const SplitConfig& split) {
  SummaryResult out;
  for (const auto& range : group_by_customer(transactions)) {
    const Transaction& first = transactions[range.begin];
    if (first.date > split.calibration_end) {
      ++out.excluded_count;
      continue;
    }
    CustomerSummary s;
    s.customer_id = first.customer_id;
    s.T = split.calibration_end - first.date;
    double spend = 0.0;
    Date last = first.date;
    for (std::size_t i = range.begin + 1; i < range.end && transactions[i].date <= split.calibration_end; ++i) {
      s.interarrivals.push_back(transactions[i].date - last);
      last = transactions[i].date;
      spend += transactions[i].amount;
      ++s.x;
    }
    s.t_x = last - first.date;
    if (s.x > 0) s.m_bar = spend / s.x;
    out.summaries.push_back(std::move(s));
  }
  return out;
}

std::array<double, kFeatureCount> FeatureVector::values() const {
  return {lifetime_duration, num_purchases, avg_gaps, avg_revenue, days_ago_first_buy, days_ago_last_buy, num_coupons};
}

const std::array<const char*, kFeatureCount>& FeatureVector::names() {
  static const std::array<const char*, kFeatureCount> kNames{"lifetime_duration",  "num_purchases",     "avg_gaps",
                                                             "avg_revenue",        "days_ago_first_buy",
                                                             "days_ago_last_buy",  "num_coupons"};
  return kNames;
}

FeatureVector make_features(std::span<const Transaction> customer_transactions, Date as_of) {
  std::vector<const Transaction*> used;
  for (const auto& t : customer_transactions)
    if (t.date <= as_of) used.push_back(&t);
  if (used.empty()) {
    const std::string id = customer_transactions.empty() ? "<unknown>" : customer_transactions.front().customer_id;
    throw DataError("customer " + id + " has no transactions on or before " + format_date(as_of));
  }
  std::sort(used.begin(), used.end(), [](const Transaction* a, const Transaction* b) { return a->date < b->date; });
  FeatureVector f;
  const Date first = used.front()->date;
  const Date last = used.back()->date;
  const auto n = static_cast<double>(used.size());
  double revenue = 0.0;
  int coupons = 0;
  for (const auto* t : used) {
    revenue += t->amount;
    coupons += t->coupon_used ? 1 : 0;
  }
  f.lifetime_duration = last - first;
  f.num_purchases = n;
  f.avg_gaps = used.size() >= 2 ? static_cast<double>(last - first) / (n - 1.0) : 0.0;
  f.avg_revenue = revenue / n;
  f.days_ago_first_buy = as_of - first;
  f.days_ago_last_buy = as_of - last;
  f.num_coupons = coupons;
  return f;
}

std::vector<FeatureRow> make_feature_table(std::span<const Transaction> transactions, Date as_of) {
  std::vector<FeatureRow> out;
  for (const auto& range : group_by_customer(transactions)) {
    const auto customer = transactions.subspan(range.begin, range.end - range.begin);
    if (customer.front().date > as_of) continue;
    out.push_back({customer.front().customer_id, make_features(customer, as_of)});
  }
  return out;
}

std::map<std::string, HoldoutTarget> holdout_targets(std::span<const Transaction> transactions,
                                                     const SplitConfig& split) {
  std::map<std::string, HoldoutTarget> out;
  const Date holdout_end = split.calibration_end + split.holdout_days;
  for (const auto& range : group_by_customer(transactions)) {
    if (transactions[range.begin].date > split.calibration_end) continue;
    HoldoutTarget target;
    for (std::size_t i = range.begin; i < range.end; ++i) {
      const auto& t = transactions[i];
      if (t.date > split.calibration_end && t.date <= holdout_end) {
        ++target.count;
        target.revenue += t.amount;
      }
    }
    out.emplace(transactions[range.begin].customer_id, target);
  }
  return out;
}

}  // namespace clv
