#include "clv/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>
#include <tuple>
#include <unordered_map>

#include "clv/persistence.hpp"

namespace clv {

std::string to_string(TargetKind kind) { return kind == TargetKind::kCount ? "count" : "revenue"; }

TargetKind parse_target_kind(const std::string& text) {
  if (text == "count") return TargetKind::kCount;
  if (text == "revenue") return TargetKind::kRevenue;
  throw DomainError("target must be 'count' or 'revenue', got '" + text + "'");
}

std::vector<double> average_ranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && values[idx[j + 1]] == values[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t m = i; m <= j; ++m) ranks[idx[m]] = r;
    i = j + 1;
  }
  return ranks;
}

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("spearman: length mismatch");
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa <= 0.0 || sbb <= 0.0) return 0.0;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

EvalReport compute_metrics(std::span<const double> pred, std::span<const double> act, TargetKind kind,
                           std::string model_name, EvalWindow window) {
  if (pred.size() != act.size()) throw ShapeError("predictions and actuals differ in length");
  if (pred.empty()) throw DataError("no customers to evaluate");
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (!std::isfinite(pred[i]) || !std::isfinite(act[i])) throw DataError("non-finite value in row " + std::to_string(i));
  EvalReport r;
  r.model_name = std::move(model_name);
  r.target_kind = kind;
  r.window = std::move(window);
  r.n_customers = pred.size();
  const double n = static_cast<double>(pred.size());
  r.total_predicted = pairwise_sum(pred);
  r.total_actual = pairwise_sum(act);
  r.aggregate_accuracy = std::max(0.0, 1.0 - std::abs(r.total_predicted - r.total_actual) / std::max(r.total_actual, 1e-9));
  r.aggregate_accuracy = std::min(r.aggregate_accuracy, 1.0);
  std::vector<double> abs_err(pred.size()), sq_err(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    abs_err[i] = std::abs(pred[i] - act[i]);
    sq_err[i] = abs_err[i] * abs_err[i];
  }
  r.mae = pairwise_sum(abs_err) / n;
  r.rmse = std::sqrt(pairwise_sum(sq_err) / n);
  r.rank_correlation = spearman(pred, act);

  const double overall = r.total_actual / n;
  if (overall == 0.0) {
    r.top_decile_lift = 1.0;
  } else {
    std::vector<std::size_t> idx(pred.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return pred[a] > pred[b]; });
    const std::size_t top = (pred.size() + 9) / 10;
    std::vector<double> top_actual(top);
    for (std::size_t i = 0; i < top; ++i) top_actual[i] = act[idx[i]];
    r.top_decile_lift = (pairwise_sum(top_actual) / static_cast<double>(top)) / overall;
  }
  return r;
}

EvalReport compute_metrics(const KeyedValues& predictions, const KeyedValues& actuals, TargetKind kind,
                           std::string model_name, EvalWindow window) {
  std::map<std::string, double> act;
  for (const auto& [id, v] : actuals)
    if (!act.emplace(id, v).second) throw DataError("duplicate customer id '" + id + "' in actuals");
  std::map<std::string, double> pred;
  for (const auto& [id, v] : predictions)
    if (!pred.emplace(id, v).second) throw DataError("duplicate customer id '" + id + "' in predictions");

  std::vector<std::string> missing;
  for (const auto& [id, v] : pred)
    if (!act.count(id)) missing.push_back(id + " (no actual)");
  for (const auto& [id, v] : act)
    if (!pred.count(id)) missing.push_back(id + " (no prediction)");
  if (!missing.empty()) {
    std::string msg = "predictions and actuals cover different customers: ";
    for (std::size_t i = 0; i < std::min<std::size_t>(5, missing.size()); ++i) msg += (i ? ", " : "") + missing[i];
    if (missing.size() > 5) msg += ", ... (" + std::to_string(missing.size()) + " total)";
    throw DataError(msg);
  }
  std::vector<double> p, a;
  for (const auto& [id, v] : act) {
    a.push_back(v);
    p.push_back(pred.at(id));
  }
  return compute_metrics(p, a, kind, std::move(model_name), std::move(window));
}

nlohmann::json to_json(const EvalReport& r) {
  return {{"model", r.model_name},
          {"target_kind", to_string(r.target_kind)},
          {"n_customers", r.n_customers},
          {"aggregate_accuracy", r.aggregate_accuracy},
          {"mae", r.mae},
          {"rmse", r.rmse},
          {"rank_correlation", r.rank_correlation},
          {"top_decile_lift", r.top_decile_lift},
          {"total_predicted", r.total_predicted},
          {"total_actual", r.total_actual},
          {"calibration_end", r.window.calibration_end},
          {"holdout_days", r.window.holdout_days}};
}

namespace {

std::string pad(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}

std::string fixed(double v, int digits) {
  std::ostringstream o;
  o << std::fixed << std::setprecision(digits) << v;
  return o.str();
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return std::max(s, 1e-9);
}

}  // namespace

std::string render_accuracy_table(std::span<const EvalReport> reports) {
  const std::string h1 = "Model";
  const std::string h2 = "% Accuracy on hold-out period";
  std::size_t w1 = h1.size();
  for (const auto& r : reports) w1 = std::max(w1, r.model_name.size());
  std::ostringstream o;
  o << pad(h1, w1) << " | " << h2 << '\n';
  o << std::string(w1, '-') << "-|-" << std::string(h2.size(), '-') << '\n';
  for (const auto& r : reports) o << pad(r.model_name, w1) << " | " << fixed(100.0 * r.aggregate_accuracy, 1) << "%\n";
  return o.str();
}

std::string render_metric_table(std::span<const EvalReport> reports) {
  const std::vector<std::string> heads{"model", "target", "n", "accuracy", "mae", "rmse", "spearman", "top10_lift"};
  std::vector<std::vector<std::string>> rows;
  for (const auto& r : reports)
    rows.push_back({r.model_name, to_string(r.target_kind), std::to_string(r.n_customers), fixed(r.aggregate_accuracy, 4),
                    fixed(r.mae, 4), fixed(r.rmse, 4), fixed(r.rank_correlation, 4), fixed(r.top_decile_lift, 4)});
  std::vector<std::size_t> w(heads.size());
  for (std::size_t j = 0; j < heads.size(); ++j) {
    w[j] = heads[j].size();
    for (const auto& row : rows) w[j] = std::max(w[j], row[j].size());
  }
  std::ostringstream o;
  for (std::size_t j = 0; j < heads.size(); ++j) o << (j ? "  " : "") << pad(heads[j], w[j]);
  o << '\n';
  for (const auto& row : rows) {
    for (std::size_t j = 0; j < row.size(); ++j) o << (j ? "  " : "") << pad(row[j], w[j]);
    o << '\n';
  }
  return o.str();
}

std::string qualitative_notes() {
  return "Statistical models (Pareto/NBD, Gamma-k regularity, Gamma-Gamma spend)\n"
         "  + need only recency, frequency, age and mean spend per customer\n"
         "  + fit in seconds and expose interpretable quantities such as P(alive)\n"
         "  - cannot use additional behavioural features such as coupon usage\n"
         "Neural network (7-128-256-512-32-1 MLP)\n"
         "  + can combine arbitrary engineered features\n"
         "  - needs a training target window carved out of the calibration period\n"
         "  - slower to train and gives no per-customer churn probability\n";
}

Comparison compare(const Dataset& dataset, const CompareOptions& options) {
  validate_split(dataset, options.split);
  const Date cutoff = options.split.calibration_end;
  const int horizon = options.split.holdout_days;
  const EvalWindow window{format_date(cutoff), horizon};

  // Every fit and training step below sees calibration rows only.
  std::vector<Transaction> calibration;
  for (const auto& t : dataset.transactions)
    if (t.date <= cutoff) calibration.push_back(t);

  Comparison cmp;
  const SummaryResult sr = summarize(calibration, options.split);
  const auto& summaries = sr.summaries;
  if (summaries.empty()) throw DataError("no customers in the calibration window");
  const auto targets = holdout_targets(dataset.transactions, options.split);
  for (const auto& s : summaries) {
    cmp.customer_ids.push_back(s.customer_id);
    const auto& t = targets.at(s.customer_id);
    cmp.actuals.push_back(options.target == TargetKind::kCount ? static_cast<double>(t.count) : t.revenue);
  }
  const std::size_t n = summaries.size();

  nlohmann::json doc;
  doc["calibration_end"] = window.calibration_end;
  doc["holdout_days"] = horizon;
  doc["target_kind"] = to_string(options.target);
  doc["n_customers"] = n;
  doc["excluded_customers"] = sr.excluded_count;
  doc["seed"] = options.seed;
  doc["accuracy_definition"] = "max(0, 1 - |sum(pred) - sum(actual)| / max(sum(actual), 1e-9))";

  FitOptions fit = options.fit;
  fit.seed = options.seed;

  auto t0 = std::chrono::steady_clock::now();
  cmp.gg_fit = fit_gg(summaries, fit);
  const double gg_seconds = seconds_since(t0);
  doc["parameters"]["gamma_gamma"] = to_json(*cmp.gg_fit);
  const GgParams gg = cmp.gg_fit->params;

  auto spend_of = [&](const GgParams& g, const CustomerSummary& s) {
    return s.x > 0 && s.m_bar ? cond_expected_spend(g, s.x, *s.m_bar) : g.population_mean();
  };

  t0 = std::chrono::steady_clock::now();
  cmp.pnbd_fit = fit_pnbd(summaries, fit);
  const double pnbd_fit_seconds = seconds_since(t0) + gg_seconds;
  doc["parameters"]["pareto_nbd"] = to_json(*cmp.pnbd_fit);
  t0 = std::chrono::steady_clock::now();
  {
    std::vector<double> pred(n);
    parallel_for(n, [&](std::size_t i) {
      pred[i] = expected_transactions(cmp.pnbd_fit->params, summaries[i], horizon);
      if (options.target == TargetKind::kRevenue) pred[i] *= spend_of(gg, summaries[i]);
    });
    cmp.predictions.emplace_back("Pareto/NBD", std::move(pred));
  }
  cmp.timings.push_back({"Pareto/NBD", pnbd_fit_seconds, seconds_since(t0)});

  const QuadratureGrid grid;
  auto regularity_predictions = [&](const RegularityParams& params, const GgParams& spend) {
    // The posterior depends on the history only through (x, t_x, T).
    using Key = std::tuple<int, double, double>;
    std::map<Key, std::size_t> first;
    std::vector<std::size_t> rep(n);
    for (std::size_t i = 0; i < n; ++i) {
      const Key key{summaries[i].x, summaries[i].t_x, summaries[i].T};
      rep[i] = first.emplace(key, i).first->second;
    }
    std::vector<double> counts(n, 0.0);
    std::vector<std::size_t> reps;
    for (const auto& [key, i] : first) reps.push_back(i);
    parallel_for(reps.size(), [&](std::size_t j) {
      const std::size_t i = reps[j];
      counts[i] = forecast_mc(params, summaries[i], horizon, options.forecast_draws, options.seed, grid).mean;
    });
    std::vector<double> pred(n);
    for (std::size_t i = 0; i < n; ++i) {
      pred[i] = counts[rep[i]];
      if (options.target == TargetKind::kRevenue) pred[i] *= spend_of(spend, summaries[i]);
    }
    return pred;
  };

  if (options.include_pggg) {
    t0 = std::chrono::steady_clock::now();
    cmp.pggg_fit = fit_pggg(summaries, fit, &cmp.pnbd_fit->params);
    const double fit_seconds = seconds_since(t0) + gg_seconds;
    doc["parameters"]["pggg_global_k"] = to_json(*cmp.pggg_fit);
    t0 = std::chrono::steady_clock::now();
    cmp.predictions.emplace_back("Pareto/GGG (global k)", regularity_predictions(cmp.pggg_fit->params, gg));
    cmp.timings.push_back({"Pareto/GGG (global k)", fit_seconds, seconds_since(t0)});
  }

  if (options.include_nn) {
    const Date train_asof = cutoff - horizon;
    const SplitConfig train_split{train_asof, horizon};
    const auto train_rows = make_feature_table(calibration, train_asof);
    const auto train_targets = holdout_targets(calibration, train_split);
    std::vector<double> y;
    for (const auto& r : train_rows) {
      const auto& t = train_targets.at(r.customer_id);
      y.push_back(options.target == TargetKind::kCount ? static_cast<double>(t.count) : t.revenue);
    }
    TrainConfig cfg = options.nn;
    cfg.seed = options.seed;
    cfg.target = to_string(options.target);
    t0 = std::chrono::steady_clock::now();
    TrainResult trained = train(feature_matrix(train_rows), y, cfg);
    const double train_seconds = seconds_since(t0);
    t0 = std::chrono::steady_clock::now();
    const auto score_rows = make_feature_table(calibration, cutoff);
    std::map<std::string, std::size_t> row_of;
    for (std::size_t i = 0; i < score_rows.size(); ++i) row_of.emplace(score_rows[i].customer_id, i);
    const auto raw = predict(trained.model, feature_matrix(score_rows));
    std::vector<double> pred(n);
    for (std::size_t i = 0; i < n; ++i) pred[i] = raw[row_of.at(cmp.customer_ids[i])];
    cmp.predictions.emplace_back("Neural Network", std::move(pred));
    cmp.timings.push_back({"Neural Network", train_seconds, seconds_since(t0)});
    doc["neural_network"] = {{"training_features_as_of", format_date(train_asof)},
                             {"training_rows", train_rows.size()},
                             {"best_epoch", trained.history.best_epoch},
                             {"epochs_run", trained.history.train_loss.size()},
                             {"best_validation_mse", trained.history.validation_loss.empty()
                                                         ? 0.0
                                                         : trained.history.validation_loss[static_cast<std::size_t>(
                                                               trained.history.best_epoch - 1)]}};
    cmp.nn_history = trained.history;
    cmp.nn_model = std::move(trained.model);
  }

  if (options.reference) {
    const RegularityParams& ref = *options.reference;
    const GgParams ref_spend = options.reference_spend.value_or(gg);
    t0 = std::chrono::steady_clock::now();
    std::vector<double> pred;
    if (ref.k == 1.0) {
      pred.resize(n);
      parallel_for(n, [&](std::size_t i) {
        pred[i] = expected_transactions(ref.pnbd(), summaries[i], horizon);
        if (options.target == TargetKind::kRevenue) pred[i] *= spend_of(ref_spend, summaries[i]);
      });
    } else {
      pred = regularity_predictions(ref, ref_spend);
    }
    cmp.predictions.emplace_back("Reference (true parameters)", std::move(pred));
    cmp.timings.push_back({"Reference (true parameters)", 0.0, seconds_since(t0)});
    doc["parameters"]["reference"] = pggg_json(ref);
  }

  nlohmann::json reports = nlohmann::json::array();
  for (const auto& [name, pred] : cmp.predictions) {
    cmp.reports.push_back(compute_metrics(pred, cmp.actuals, options.target, name, window));
    reports.push_back(to_json(cmp.reports.back()));
  }
  doc["reports"] = reports;
  doc["notes"] = qualitative_notes();
  cmp.document = std::move(doc);
  return cmp;
}

void write_comparison(const Comparison& cmp, const std::filesystem::path& out_dir) {
  write_json(out_dir / "comparison.json", cmp.document);

  std::ostringstream txt;
  txt << "Holdout comparison, calibration end " << cmp.document.value("calibration_end", std::string{}) << ", "
      << cmp.document.value("holdout_days", 0) << " day holdout, target "
      << cmp.document.value("target_kind", std::string{}) << "\n\n";
  txt << render_accuracy_table(cmp.reports) << '\n' << render_metric_table(cmp.reports) << '\n';
  txt << "Accuracy is the clamped relative error of the holdout totals.\n";
  if (cmp.pggg_fit) txt << "The regularity model shares one k across all customers.\n";
  txt << '\n' << qualitative_notes();
  write_text(out_dir / "comparison.txt", txt.str());

  std::ostringstream csv;
  csv << "customer_id,actual";
  for (const auto& [name, p] : cmp.predictions) csv << ',' << name;
  csv << '\n';
  for (std::size_t i = 0; i < cmp.customer_ids.size(); ++i) {
    csv << cmp.customer_ids[i] << ',' << format_double(cmp.actuals[i]);
    for (const auto& [name, p] : cmp.predictions) csv << ',' << format_double(p[i]);
    csv << '\n';
  }
  write_text(out_dir / "predictions.csv", csv.str());

  nlohmann::json timings = nlohmann::json::array();
  for (const auto& t : cmp.timings)
    timings.push_back({{"model", t.model}, {"fit_seconds", t.fit_seconds}, {"predict_seconds", t.predict_seconds}});
  write_json(out_dir / "timings.json", timings);
}

}  // namespace clv
