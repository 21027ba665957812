#include "clv/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "clv/persistence.hpp"

namespace clv {

void SimConfig::validate() const {
  if (n_customers < 0) throw DomainError("n_customers must be non-negative");
  if (observation_days <= 0 || holdout_days <= 0) throw DomainError("observation_days and holdout_days must be positive");
  if (acquisition_window_days < 0 || acquisition_window_days >= observation_days)
    throw DomainError("acquisition_window_days must lie in [0, observation_days)");
  if (!(coupon_prob >= 0.0 && coupon_prob <= 1.0)) throw DomainError("coupon_prob must lie in [0, 1]");
  params.validate();
  spend.validate();
}

SimConfig load_sim_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(ParseErrorKind::kUnreadableFile, 0, "cannot read simulation config '" + path.string() + "'");
  SimConfig cfg;
  const std::map<std::string, std::function<void(const std::string&)>> setters = [&] {
    auto num = [](const std::string& v) {
      const auto d = parse_double(v);
      if (!d) throw ParseError(ParseErrorKind::kMalformedNumber, 0, "not a number: '" + v + "'");
      return *d;
    };
    auto integer = [num](const std::string& v) {
      const double d = num(v);
      if (d != std::floor(d)) throw ParseError(ParseErrorKind::kMalformedNumber, 0, "not an integer: '" + v + "'");
      return static_cast<long long>(d);
    };
    std::map<std::string, std::function<void(const std::string&)>> m;
    m["n_customers"] = [&, integer](const std::string& v) { cfg.n_customers = static_cast<int>(integer(v)); };
    m["observation_days"] = [&, integer](const std::string& v) { cfg.observation_days = static_cast<int>(integer(v)); };
    m["holdout_days"] = [&, integer](const std::string& v) { cfg.holdout_days = static_cast<int>(integer(v)); };
    m["acquisition_window_days"] = [&, integer](const std::string& v) {
      cfg.acquisition_window_days = static_cast<int>(integer(v));
    };
    m["seed"] = [&, integer](const std::string& v) { cfg.seed = static_cast<std::uint64_t>(integer(v)); };
    m["r"] = [&, num](const std::string& v) { cfg.params.r = num(v); };
    m["alpha"] = [&, num](const std::string& v) { cfg.params.alpha = num(v); };
    m["s"] = [&, num](const std::string& v) { cfg.params.s = num(v); };
    m["beta"] = [&, num](const std::string& v) { cfg.params.beta = num(v); };
    m["k"] = [&, num](const std::string& v) { cfg.params.k = num(v); };
    m["p"] = [&, num](const std::string& v) { cfg.spend.p = num(v); };
    m["q"] = [&, num](const std::string& v) { cfg.spend.q = num(v); };
    m["gamma"] = [&, num](const std::string& v) { cfg.spend.gamma = num(v); };
    m["coupon_prob"] = [&, num](const std::string& v) { cfg.coupon_prob = num(v); };
    m["start_date"] = [&](const std::string& v) {
      const auto d = parse_date(v);
      if (!d) throw ParseError(ParseErrorKind::kMalformedDate, 0, "malformed start_date '" + v + "'");
      cfg.start_date = *d;
    };
    return m;
  }();

  std::string line;
  std::size_t line_no = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(ParseErrorKind::kMalformedRow, line_no, "expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = setters.find(key);
    if (it == setters.end()) throw ParseError(ParseErrorKind::kMalformedRow, line_no, "unknown key '" + key + "'");
    try {
      it->second(value);
    } catch (const ParseError& e) {
      throw ParseError(e.kind(), line_no, e.what());
    }
  }
  cfg.validate();
  return cfg;
}

SimCustomer simulate_customer(const RegularityParams& p, const GgParams& spend, double horizon_days,
                              double coupon_prob, Rng& rng) {
  SimCustomer c;
  c.lambda = std::gamma_distribution<double>(p.r, 1.0 / p.alpha)(rng);
  c.mu = std::gamma_distribution<double>(p.s, 1.0 / p.beta)(rng);
  c.dropout_time = std::exponential_distribution<double>(c.mu)(rng);
  c.nu = std::gamma_distribution<double>(spend.q, 1.0 / spend.gamma)(rng);
  std::gamma_distribution<double> gap(p.k, 1.0 / (p.k * c.lambda));
  std::gamma_distribution<double> amount(spend.p, 1.0 / c.nu);
  std::bernoulli_distribution coupon(coupon_prob);
  const double end = std::min(c.dropout_time, horizon_days);
  double t = 0.0;
  while (t < end) {
    c.times.push_back(t);
    c.amounts.push_back(amount(rng));
    c.coupons.push_back(coupon(rng));
    t += gap(rng);
  }
  if (c.times.empty()) {
    // Acquisition purchase is observed even for an instantly-dropping customer.
    c.times.push_back(0.0);
    c.amounts.push_back(amount(rng));
    c.coupons.push_back(coupon(rng));
  }
  return c;
}

CustomerSummary summarize_simulated(const SimCustomer& customer, double calibration_days, std::string id) {
  CustomerSummary s;
  s.customer_id = std::move(id);
  s.T = calibration_days;
  double last = 0.0;
  double spend = 0.0;
  for (std::size_t i = 1; i < customer.times.size() && customer.times[i] < calibration_days; ++i) {
    s.interarrivals.push_back(customer.times[i] - last);
    last = customer.times[i];
    spend += customer.amounts[i];
    ++s.x;
  }
  s.t_x = last;
  if (s.x > 0) s.m_bar = spend / s.x;
  return s;
}

SimOutcome simulated_window(const SimCustomer& customer, double from, double to) {
  SimOutcome out;
  for (std::size_t i = 0; i < customer.times.size(); ++i) {
    if (customer.times[i] >= from && customer.times[i] < to) {
      ++out.count;
      out.revenue += customer.amounts[i];
    }
  }
  return out;
}

SimCohort simulate_cohort(const SimConfig& config) {
  config.validate();
  SimCohort cohort;
  const auto n = static_cast<std::size_t>(config.n_customers);
  cohort.ids.resize(n);
  cohort.acquisition_day.resize(n);
  cohort.customers.resize(n);
  cohort.truth.resize(n);
  std::vector<std::vector<Transaction>> rows(n);
  const int last_day = config.observation_days + config.holdout_days - 1;
  parallel_for(n, [&](std::size_t i) {
    Rng rng = substream(config.seed, i);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "C%07zu", i + 1);
    cohort.ids[i] = buf;
    const int acq = config.acquisition_window_days > 0
                        ? std::uniform_int_distribution<int>(0, config.acquisition_window_days)(rng)
                        : 0;
    cohort.acquisition_day[i] = acq;
    const double horizon = static_cast<double>(last_day + 1 - acq);
    SimCustomer c = simulate_customer(config.params, config.spend, horizon, config.coupon_prob, rng);

    // Day-resolution rows; same-day purchases merge as in the cleaning rules.
    GroundTruth g{cohort.ids[i], c.lambda, c.mu, acq + c.dropout_time, 0, 0.0};
    for (std::size_t j = 0; j < c.times.size(); ++j) {
      const int day = acq + static_cast<int>(std::floor(c.times[j]));
      const Date date = config.start_date + day;
      if (!rows[i].empty() && rows[i].back().date == date) {
        rows[i].back().amount += c.amounts[j];
        rows[i].back().coupon_used = rows[i].back().coupon_used || c.coupons[j];
      } else {
        rows[i].push_back({cohort.ids[i], date, c.amounts[j], static_cast<bool>(c.coupons[j])});
        if (day >= config.observation_days) ++g.true_holdout_count;
      }
      if (day >= config.observation_days) g.true_holdout_revenue += c.amounts[j];
    }
    cohort.truth[i] = g;
    cohort.customers[i] = std::move(c);
  });
  for (auto& r : rows)
    for (auto& t : r) cohort.transactions.push_back(std::move(t));
  return cohort;
}

void write_cohort(const SimCohort& cohort, const SimConfig& config, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw Error("cannot create output directory '" + out_dir.string() + "': " + ec.message());
  {
    std::ostringstream out;
    out << "customer_id,date,amount,coupon\n";
    for (const auto& t : cohort.transactions)
      out << t.customer_id << ',' << format_date(t.date) << ',' << format_double(t.amount) << ','
          << (t.coupon_used ? 1 : 0) << '\n';
    write_text(out_dir / "transactions.csv", out.str());
  }
  {
    std::ostringstream out;
    out << "customer_id,lambda,mu,dropout_day,true_holdout_count,true_holdout_revenue\n";
    for (const auto& g : cohort.truth)
      out << g.customer_id << ',' << format_double(g.lambda) << ',' << format_double(g.mu) << ','
          << format_double(g.dropout_day) << ',' << g.true_holdout_count << ',' << format_double(g.true_holdout_revenue)
          << '\n';
    write_text(out_dir / "ground_truth.csv", out.str());
  }
  nlohmann::json meta;
  meta["n_customers"] = config.n_customers;
  meta["start_date"] = format_date(config.start_date);
  meta["calibration_end"] = format_date(config.calibration_end());
  meta["max_date"] = format_date(config.max_date());
  meta["observation_days"] = config.observation_days;
  meta["holdout_days"] = config.holdout_days;
  meta["acquisition_window_days"] = config.acquisition_window_days;
  meta["coupon_prob"] = config.coupon_prob;
  meta["seed"] = config.seed;
  write_json(out_dir / "cohort.json", meta);
  write_json(out_dir / "true_pnbd.json", pnbd_json(config.params.pnbd()));
  write_json(out_dir / "true_pggg.json", pggg_json(config.params));
  write_json(out_dir / "true_gg.json", gg_json(config.spend));
}

}  // namespace clv
