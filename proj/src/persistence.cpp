#include "clv/persistence.hpp"

#include <fstream>
#include <sstream>
#include <unordered_map>

namespace clv {

namespace {

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, sep)) out.push_back(field);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

std::ifstream open_or_throw(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(ParseErrorKind::kUnreadableFile, 0, "cannot read '" + path.string() + "'");
  return in;
}

double number_at(const std::vector<std::string>& fields, std::size_t col, std::size_t line,
                 const std::filesystem::path& path) {
  if (col >= fields.size())
    throw ParseError(ParseErrorKind::kMalformedRow, line, path.string() + ": too few fields");
  const auto v = parse_double(fields[col]);
  if (!v)
    throw ParseError(ParseErrorKind::kMalformedNumber, line,
                     path.string() + ": malformed number '" + fields[col] + "'");
  return *v;
}

std::size_t column_index(const std::vector<std::string>& header, const std::string& name,
                         const std::filesystem::path& path) {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return i;
  throw ParseError(ParseErrorKind::kMissingColumn, 1, path.string() + ": missing column '" + name + "'");
}

double get_number(const nlohmann::json& doc, const char* key) {
  if (!doc.contains(key) || !doc[key].is_number()) throw DataError(std::string("model document lacks numeric '") + key + "'");
  return doc[key].get<double>();
}

void expect_model(const nlohmann::json& doc, const std::string& tag) {
  if (!doc.contains("model") || doc["model"] != tag)
    throw DataError("expected a '" + tag + "' model document");
}

template <class P>
void fit_fields(nlohmann::json& doc, const FitResult<P>& fit) {
  doc["log_likelihood"] = fit.log_likelihood;
  doc["converged"] = fit.converged;
  doc["iterations"] = fit.iterations;
  doc["restarts_used"] = fit.restarts_used;
}

}  // namespace

nlohmann::json pnbd_json(const PnbdParams& p) {
  return {{"model", "pareto_nbd"}, {"r", p.r}, {"alpha", p.alpha}, {"s", p.s}, {"beta", p.beta}};
}

nlohmann::json gg_json(const GgParams& p) { return {{"model", "gamma_gamma"}, {"p", p.p}, {"q", p.q}, {"gamma", p.gamma}}; }

nlohmann::json pggg_json(const RegularityParams& p) {
  return {{"model", "pggg_global_k"}, {"r", p.r}, {"alpha", p.alpha}, {"s", p.s}, {"beta", p.beta}, {"k", p.k}};
}

nlohmann::json to_json(const FitResult<PnbdParams>& fit) {
  auto doc = pnbd_json(fit.params);
  fit_fields(doc, fit);
  return doc;
}

nlohmann::json to_json(const GgFitResult& fit) {
  auto doc = gg_json(fit.params);
  fit_fields(doc, fit);
  doc["degenerate"] = fit.degenerate;
  doc["frequency_spend_correlation"] = fit.frequency_spend_correlation;
  doc["correlation_warning"] = fit.correlation_warning;
  return doc;
}

nlohmann::json to_json(const PgggFitResult& fit) {
  auto doc = pggg_json(fit.params);
  fit_fields(doc, fit);
  doc["warm_start"] = pnbd_json(fit.warm_start);
  doc["warm_start_log_likelihood"] = fit.warm_start_log_likelihood;
  return doc;
}

PnbdParams pnbd_from_json(const nlohmann::json& doc) {
  expect_model(doc, "pareto_nbd");
  PnbdParams p{get_number(doc, "r"), get_number(doc, "alpha"), get_number(doc, "s"), get_number(doc, "beta")};
  p.validate();
  return p;
}

GgParams gg_from_json(const nlohmann::json& doc) {
  expect_model(doc, "gamma_gamma");
  GgParams p{get_number(doc, "p"), get_number(doc, "q"), get_number(doc, "gamma")};
  p.validate();
  return p;
}

RegularityParams pggg_from_json(const nlohmann::json& doc) {
  expect_model(doc, "pggg_global_k");
  RegularityParams p{get_number(doc, "r"), get_number(doc, "alpha"), get_number(doc, "s"), get_number(doc, "beta"),
                     get_number(doc, "k")};
  p.validate();
  return p;
}

nlohmann::json read_json(const std::filesystem::path& path) {
  auto in = open_or_throw(path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(ParseErrorKind::kMalformedRow, 0, path.string() + ": " + e.what());
  }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw Error("write failed for '" + path.string() + "'");
}

void write_json(const std::filesystem::path& path, const nlohmann::json& doc) { write_text(path, doc.dump(2) + "\n"); }

std::filesystem::path interarrivals_path_for(const std::filesystem::path& summaries) {
  auto p = summaries;
  p.replace_filename("interarrivals.csv");
  return p;
}

void write_summaries(const std::filesystem::path& summaries, const std::filesystem::path& interarrivals,
                     const std::vector<CustomerSummary>& rows) {
  std::ostringstream s;
  std::ostringstream g;
  s << "customer_id,x,t_x,T,m_bar\n";
  g << "customer_id,interarrivals\n";
  for (const auto& c : rows) {
    s << c.customer_id << ',' << c.x << ',' << format_double(c.t_x) << ',' << format_double(c.T) << ',';
    if (c.m_bar) s << format_double(*c.m_bar);
    s << '\n';
    g << c.customer_id << ',';
    for (std::size_t i = 0; i < c.interarrivals.size(); ++i) {
      if (i) g << ';';
      g << format_double(c.interarrivals[i]);
    }
    g << '\n';
  }
  write_text(summaries, s.str());
  if (!interarrivals.empty()) write_text(interarrivals, g.str());
}

std::vector<CustomerSummary> read_summaries(const std::filesystem::path& summaries,
                                            const std::filesystem::path& interarrivals) {
  auto in = open_or_throw(summaries);
  std::string line;
  if (!std::getline(in, line)) throw ParseError(ParseErrorKind::kMissingColumn, 1, summaries.string() + ": empty file");
  strip_cr(line);
  const auto header = split(line, ',');
  const std::size_t c_id = column_index(header, "customer_id", summaries);
  const std::size_t c_x = column_index(header, "x", summaries);
  const std::size_t c_tx = column_index(header, "t_x", summaries);
  const std::size_t c_T = column_index(header, "T", summaries);
  const std::size_t c_m = column_index(header, "m_bar", summaries);

  std::vector<CustomerSummary> rows;
  std::unordered_map<std::string, std::size_t> index;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    strip_cr(line);
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() < header.size())
      throw ParseError(ParseErrorKind::kMalformedRow, line_no, summaries.string() + ": too few fields");
    CustomerSummary c;
    c.customer_id = f[c_id];
    const double x = number_at(f, c_x, line_no, summaries);
    if (x < 0 || x != static_cast<int>(x))
      throw ParseError(ParseErrorKind::kMalformedNumber, line_no, summaries.string() + ": x must be a count");
    c.x = static_cast<int>(x);
    c.t_x = number_at(f, c_tx, line_no, summaries);
    c.T = number_at(f, c_T, line_no, summaries);
    if (!f[c_m].empty()) c.m_bar = number_at(f, c_m, line_no, summaries);
    index.emplace(c.customer_id, rows.size());
    rows.push_back(std::move(c));
  }

  if (!interarrivals.empty() && std::filesystem::exists(interarrivals)) {
    auto gin = open_or_throw(interarrivals);
    line_no = 0;
    while (std::getline(gin, line)) {
      ++line_no;
      strip_cr(line);
      if (line.empty() || (line_no == 1 && line.rfind("customer_id,", 0) == 0)) continue;
      const auto comma = line.find(',');
      if (comma == std::string::npos)
        throw ParseError(ParseErrorKind::kMalformedRow, line_no, interarrivals.string() + ": expected 'id,gaps'");
      const auto it = index.find(line.substr(0, comma));
      if (it == index.end()) continue;
      auto& gaps = rows[it->second].interarrivals;
      const std::string rest = line.substr(comma + 1);
      if (rest.empty()) continue;
      const auto parts = split(rest, ';');
      for (std::size_t j = 0; j < parts.size(); ++j) gaps.push_back(number_at(parts, j, line_no, interarrivals));
    }
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    try {
      if (!rows[i].interarrivals.empty() || rows[i].x == 0) rows[i].validate();
    } catch (const DomainError& e) {
      throw ParseError(ParseErrorKind::kMalformedRow, i + 2, summaries.string() + ": " + e.what());
    }
  }
  return rows;
}

void write_features(const std::filesystem::path& path, const std::vector<FeatureRow>& rows) {
  std::ostringstream out;
  out << "customer_id";
  for (const char* n : FeatureVector::names()) out << ',' << n;
  out << '\n';
  for (const auto& r : rows) {
    out << r.customer_id;
    for (double v : r.features.values()) out << ',' << format_double(v);
    out << '\n';
  }
  write_text(path, out.str());
}

std::vector<FeatureRow> read_features(const std::filesystem::path& path) {
  auto in = open_or_throw(path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError(ParseErrorKind::kMissingColumn, 1, path.string() + ": empty file");
  strip_cr(line);
  const auto header = split(line, ',');
  const std::size_t c_id = column_index(header, "customer_id", path);
  std::array<std::size_t, kFeatureCount> cols{};
  for (std::size_t j = 0; j < kFeatureCount; ++j) cols[j] = column_index(header, FeatureVector::names()[j], path);
  std::vector<FeatureRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    strip_cr(line);
    if (line.empty()) continue;
    const auto f = split(line, ',');
    FeatureRow r;
    r.customer_id = f.at(c_id);
    auto& v = r.features;
    double* fields[kFeatureCount] = {&v.lifetime_duration, &v.num_purchases,      &v.avg_gaps,    &v.avg_revenue,
                                     &v.days_ago_first_buy, &v.days_ago_last_buy, &v.num_coupons};
    for (std::size_t j = 0; j < kFeatureCount; ++j) *fields[j] = number_at(f, cols[j], line_no, path);
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_targets(const std::filesystem::path& path, const std::map<std::string, HoldoutTarget>& targets) {
  std::ostringstream out;
  out << "customer_id,holdout_count,holdout_revenue\n";
  for (const auto& [id, t] : targets) out << id << ',' << t.count << ',' << format_double(t.revenue) << '\n';
  write_text(path, out.str());
}

std::vector<std::string> read_header(const std::filesystem::path& path) {
  auto in = open_or_throw(path);
  std::string line;
  if (!std::getline(in, line)) return {};
  strip_cr(line);
  return split(line, ',');
}

std::vector<std::pair<std::string, double>> read_keyed_column(const std::filesystem::path& path,
                                                              const std::string& column) {
  auto in = open_or_throw(path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError(ParseErrorKind::kMissingColumn, 1, path.string() + ": empty file");
  strip_cr(line);
  const auto header = split(line, ',');
  const std::size_t c_id = column_index(header, "customer_id", path);
  const std::size_t c_v = column_index(header, column, path);
  std::vector<std::pair<std::string, double>> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    strip_cr(line);
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (c_id >= f.size()) throw ParseError(ParseErrorKind::kMalformedRow, line_no, path.string() + ": too few fields");
    out.emplace_back(f[c_id], number_at(f, c_v, line_no, path));
  }
  return out;
}

}  // namespace clv
