#include "clv/cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>

#include "clv/data_pipeline.hpp"
#include "clv/evaluation.hpp"
#include "clv/neural_net.hpp"
#include "clv/pareto_nbd.hpp"
#include "clv/persistence.hpp"
#include "clv/regularity.hpp"
#include "clv/simulation.hpp"
#include "clv/spend_model.hpp"

namespace clv {

namespace {

namespace fs = std::filesystem;

const CLI::Validator kIsoDate(
    [](std::string& text) { return parse_date(text) ? std::string{} : "expected YYYY-MM-DD, got '" + text + "'"; },
    "DATE");

Date date_flag(const std::string& text, const std::string& flag) {
  const auto d = parse_date(text);
  if (!d) throw CLI::ValidationError(flag, "expected YYYY-MM-DD, got '" + text + "'");
  return *d;
}

CleaningPolicy cleaning_policy(const std::string& min_date, const std::string& max_date) {
  CleaningPolicy p;
  if (!min_date.empty()) p.min_date = date_flag(min_date, "--min-date");
  if (!max_date.empty()) p.max_date = date_flag(max_date, "--max-date");
  return p;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("cannot create output directory '" + dir.string() + "': " + ec.message());
}

std::string csv_number(double v) { return format_double(v); }

struct Globals {
  std::uint64_t seed = 42;
  int threads = 1;
};

struct SummarizeArgs {
  std::string input, cutoff, out_dir, min_date, max_date;
  int holdout_days = 182;
};

void do_summarize(const SummarizeArgs& a, std::ostream& out) {
  const Dataset ds = parse_transactions(a.input, cleaning_policy(a.min_date, a.max_date));
  const SplitConfig split{date_flag(a.cutoff, "--cutoff"), a.holdout_days};
  validate_split(ds, split);
  std::vector<Transaction> calibration;
  for (const auto& t : ds.transactions)
    if (t.date <= split.calibration_end) calibration.push_back(t);
  const SummaryResult sr = summarize(calibration, split);
  const fs::path dir = a.out_dir;
  ensure_dir(dir);
  write_summaries(dir / "summaries.csv", dir / "interarrivals.csv", sr.summaries);
  write_features(dir / "features.csv", make_feature_table(calibration, split.calibration_end));
  write_targets(dir / "targets.csv", holdout_targets(ds.transactions, split));
  const Date train_asof = split.calibration_end - split.holdout_days;
  write_features(dir / "train_features.csv", make_feature_table(calibration, train_asof));
  write_targets(dir / "train_targets.csv", holdout_targets(calibration, SplitConfig{train_asof, split.holdout_days}));
  nlohmann::json stats = {{"rows_read", ds.stats.rows_read},
                          {"merged_count", ds.stats.merged_count},
                          {"dropped_negative", ds.stats.dropped_negative},
                          {"dropped_out_of_range", ds.stats.dropped_out_of_range},
                          {"min_date", format_date(ds.min_date)},
                          {"max_date", format_date(ds.max_date)},
                          {"calibration_end", format_date(split.calibration_end)},
                          {"holdout_days", split.holdout_days},
                          {"training_features_as_of", format_date(train_asof)},
                          {"customers", sr.summaries.size()},
                          {"excluded_count", sr.excluded_count}};
  write_json(dir / "summary_stats.json", stats);
  out << "summarized " << sr.summaries.size() << " customers (" << sr.excluded_count << " excluded, "
      << ds.stats.merged_count << " merged, " << ds.stats.dropped_negative << " negative rows dropped) into " << dir.string()
      << '\n';
}

struct FitArgs {
  std::string model, summaries, interarrivals, out, warm_start;
  int restarts = 4;
  int max_evaluations = 20000;
};

void do_fit(const FitArgs& a, const Globals& g, std::ostream& out) {
  FitOptions opt;
  opt.seed = g.seed;
  opt.restarts = a.restarts;
  opt.max_evaluations = a.max_evaluations;
  const fs::path gaps = a.interarrivals.empty() ? interarrivals_path_for(a.summaries) : fs::path(a.interarrivals);
  if (a.model == "pnbd") {
    const auto rows = read_summaries(a.summaries);
    const auto fit = fit_pnbd(rows, opt);
    write_json(a.out, to_json(fit));
    out << "pareto_nbd r=" << fit.params.r << " alpha=" << fit.params.alpha << " s=" << fit.params.s
        << " beta=" << fit.params.beta << " loglik=" << fit.log_likelihood << (fit.converged ? "" : " (not converged)")
        << '\n';
  } else if (a.model == "gg") {
    const auto rows = read_summaries(a.summaries);
    const auto fit = fit_gg(rows, opt);
    write_json(a.out, to_json(fit));
    out << "gamma_gamma p=" << fit.params.p << " q=" << fit.params.q << " gamma=" << fit.params.gamma
        << " loglik=" << fit.log_likelihood << (fit.converged ? "" : " (not converged)") << '\n';
    if (fit.correlation_warning)
      out << "warning: frequency/spend correlation " << fit.frequency_spend_correlation
          << " exceeds 0.3; the independence assumption is questionable\n";
  } else {
    if (!fs::exists(gaps)) throw DataError("interarrival sidecar '" + gaps.string() + "' not found");
    const auto rows = read_summaries(a.summaries, gaps);
    std::optional<PnbdParams> warm;
    if (!a.warm_start.empty()) warm = pnbd_from_json(read_json(a.warm_start));
    const auto fit = fit_pggg(rows, opt, warm ? &*warm : nullptr);
    write_json(a.out, to_json(fit));
    out << "pggg_global_k r=" << fit.params.r << " alpha=" << fit.params.alpha << " s=" << fit.params.s
        << " beta=" << fit.params.beta << " k=" << fit.params.k << " loglik=" << fit.log_likelihood
        << (fit.converged ? "" : " (not converged)") << '\n';
  }
}

struct TrainArgs {
  std::string model = "nn";
  std::string features, targets, out, target = "count", hidden;
  TrainConfig config;
};

void do_train(TrainArgs a, const Globals& g, std::ostream& out) {
  const auto rows = read_features(a.features);
  const std::string column = a.target == "count" ? "holdout_count" : "holdout_revenue";
  std::map<std::string, double> y_of;
  for (const auto& [id, v] : read_keyed_column(a.targets, column)) y_of[id] = v;
  std::vector<double> y;
  for (const auto& r : rows) {
    const auto it = y_of.find(r.customer_id);
    if (it == y_of.end()) throw DataError("no target for customer '" + r.customer_id + "' in " + a.targets);
    y.push_back(it->second);
  }
  a.config.seed = g.seed;
  a.config.target = a.target;
  if (!a.hidden.empty()) {
    a.config.hidden.clear();
    std::stringstream ss(a.hidden);
    std::string item;
    while (std::getline(ss, item, ',')) {
      const auto v = parse_double(item);
      if (!v || *v < 1 || *v != static_cast<int>(*v)) throw CLI::ValidationError("--hidden", "bad width '" + item + "'");
      a.config.hidden.push_back(static_cast<int>(*v));
    }
  }
  const TrainResult res = train(feature_matrix(rows), y, a.config);
  write_json(a.out, model_to_json(res.model));
  std::ostringstream hist;
  hist << "epoch,train_mse,validation_mse\n";
  for (std::size_t e = 0; e < res.history.train_loss.size(); ++e)
    hist << e + 1 << ',' << csv_number(res.history.train_loss[e]) << ',' << csv_number(res.history.validation_loss[e])
         << '\n';
  fs::path hist_path = a.out;
  hist_path.replace_extension(".history.csv");
  write_text(hist_path, hist.str());
  out << "trained " << res.model.parameter_count() << " parameters for " << res.history.train_loss.size()
      << " epochs; best epoch " << res.history.best_epoch << " validation mse "
      << res.history.validation_loss[static_cast<std::size_t>(res.history.best_epoch - 1)] << '\n';
}

struct PredictArgs {
  std::string model, summaries, interarrivals, features, out, gg_model;
  double horizon_days = 182;
  int draws = 10000;
};

void do_predict(const PredictArgs& a, const Globals& g, std::ostream& out) {
  const nlohmann::json doc = read_json(a.model);
  std::ostringstream csv;
  std::size_t n = 0;
  if (doc.contains("format")) {
    if (a.features.empty()) throw CLI::ValidationError("--features", "an mlp-v1 model predicts from --features");
    const MlpModel m = model_from_json(doc);
    const auto rows = read_features(a.features);
    const auto pred = predict(m, feature_matrix(rows));
    csv << "customer_id,prediction\n";
    for (std::size_t i = 0; i < rows.size(); ++i) csv << rows[i].customer_id << ',' << csv_number(pred[i]) << '\n';
    n = rows.size();
  } else {
    if (a.summaries.empty()) throw CLI::ValidationError("--summaries", "statistical models predict from --summaries");
    const std::string tag = doc.value("model", std::string{});
    std::optional<GgParams> gg;
    if (!a.gg_model.empty()) gg = gg_from_json(read_json(a.gg_model));
    if (tag == "pareto_nbd") {
      const PnbdParams p = pnbd_from_json(doc);
      const auto rows = read_summaries(a.summaries);
      csv << "customer_id,prediction,p_alive" << (gg ? ",expected_ltv" : "") << '\n';
      for (const auto& s : rows) {
        csv << s.customer_id << ',' << csv_number(expected_transactions(p, s, a.horizon_days)) << ','
            << csv_number(p_alive(p, s));
        if (gg) csv << ',' << csv_number(expected_ltv(p, *gg, s, a.horizon_days));
        csv << '\n';
      }
      n = rows.size();
    } else if (tag == "pggg_global_k") {
      const RegularityParams p = pggg_from_json(doc);
      const fs::path gaps = a.interarrivals.empty() ? interarrivals_path_for(a.summaries) : fs::path(a.interarrivals);
      const auto rows = read_summaries(a.summaries, gaps);
      const QuadratureGrid grid;
      std::vector<ForecastResult> fc(rows.size());
      std::vector<double> alive(rows.size());
      parallel_for(rows.size(), [&](std::size_t i) {
        fc[i] = forecast_mc(p, rows[i], a.horizon_days, a.draws, g.seed, grid);
        alive[i] = p_alive_k(p, rows[i], grid);
      });
      csv << "customer_id,prediction,std_error,p_alive" << (gg ? ",expected_ltv" : "") << '\n';
      for (std::size_t i = 0; i < rows.size(); ++i) {
        csv << rows[i].customer_id << ',' << csv_number(fc[i].mean) << ',' << csv_number(fc[i].std_error) << ','
            << csv_number(alive[i]);
        if (gg) {
          const auto& s = rows[i];
          const double spend = s.x > 0 && s.m_bar ? cond_expected_spend(*gg, s.x, *s.m_bar) : gg->population_mean();
          csv << ',' << csv_number(fc[i].mean * spend);
        }
        csv << '\n';
      }
      n = rows.size();
    } else if (tag == "gamma_gamma") {
      const GgParams p = gg_from_json(doc);
      const auto rows = read_summaries(a.summaries);
      csv << "customer_id,prediction\n";
      for (const auto& s : rows)
        csv << s.customer_id << ','
            << csv_number(s.x > 0 && s.m_bar ? cond_expected_spend(p, s.x, *s.m_bar) : p.population_mean()) << '\n';
      n = rows.size();
    } else {
      throw DataError("unrecognized model document '" + a.model + "'");
    }
  }
  write_text(a.out, csv.str());
  out << "wrote " << n << " predictions to " << a.out << '\n';
}

struct SimulateArgs {
  std::string config, out_dir;
};

void do_simulate(const SimulateArgs& a, const Globals& g, bool seed_given, std::ostream& out) {
  SimConfig cfg = a.config.empty() ? SimConfig{} : load_sim_config(a.config);
  if (seed_given || a.config.empty()) cfg.seed = g.seed;
  const SimCohort cohort = simulate_cohort(cfg);
  write_cohort(cohort, cfg, a.out_dir);
  out << "simulated " << cfg.n_customers << " customers (" << cohort.transactions.size() << " transactions, seed "
      << cfg.seed << ") into " << a.out_dir << "; calibration ends " << format_date(cfg.calibration_end()) << '\n';
}

struct EvaluateArgs {
  std::string predictions, actuals, out, prediction_column = "prediction", actual_column, target = "count",
                                           name = "model";
};

void do_evaluate(const EvaluateArgs& a, std::ostream& out) {
  const TargetKind kind = parse_target_kind(a.target);
  std::string actual_column = a.actual_column;
  if (actual_column.empty()) {
    const auto header = read_header(a.actuals);
    const std::string preferred = kind == TargetKind::kCount ? "holdout_count" : "holdout_revenue";
    const std::string truth = kind == TargetKind::kCount ? "true_holdout_count" : "true_holdout_revenue";
    actual_column = std::find(header.begin(), header.end(), truth) != header.end() ? truth : preferred;
  }
  const auto pred = read_keyed_column(a.predictions, a.prediction_column);
  const auto act = read_keyed_column(a.actuals, actual_column);
  const EvalReport r = compute_metrics(pred, act, kind, a.name);
  const fs::path dir = a.out;
  ensure_dir(dir);
  write_json(dir / "report.json", to_json(r));
  const std::vector<EvalReport> one{r};
  write_text(dir / "report.txt", render_accuracy_table(one) + "\n" + render_metric_table(one));
  std::map<std::string, double> pm(pred.begin(), pred.end());
  std::map<std::string, double> am(act.begin(), act.end());
  std::ostringstream csv;
  csv << "customer_id,prediction,actual\n";
  for (const auto& [id, v] : am) csv << id << ',' << csv_number(pm.at(id)) << ',' << csv_number(v) << '\n';
  write_text(dir / "pairs.csv", csv.str());
  out << render_accuracy_table(one);
}

struct CompareArgs {
  std::string input, cutoff, out_dir, reference_model, reference_spend, target = "count", min_date, max_date, hidden;
  int holdout_days = 182;
  int restarts = 4;
  int draws = 2000;
  int epochs = 30;
  int batch_size = 256;
  int patience = 10;
  double learning_rate = 1e-3;
  bool no_pggg = false;
  bool no_nn = false;
};

void do_compare(const CompareArgs& a, const Globals& g, std::ostream& out) {
  const Dataset ds = parse_transactions(a.input, cleaning_policy(a.min_date, a.max_date));
  CompareOptions opt;
  opt.split = {date_flag(a.cutoff, "--cutoff"), a.holdout_days};
  opt.seed = g.seed;
  opt.fit.restarts = a.restarts;
  opt.target = parse_target_kind(a.target);
  opt.forecast_draws = a.draws;
  opt.include_pggg = !a.no_pggg;
  opt.include_nn = !a.no_nn;
  opt.nn.epochs = a.epochs;
  opt.nn.batch_size = a.batch_size;
  opt.nn.patience = a.patience;
  opt.nn.learning_rate = a.learning_rate;
  if (!a.reference_model.empty()) {
    const auto doc = read_json(a.reference_model);
    const std::string tag = doc.value("model", std::string{});
    opt.reference = tag == "pareto_nbd" ? RegularityParams::from_pnbd(pnbd_from_json(doc)) : pggg_from_json(doc);
  }
  if (!a.reference_spend.empty()) opt.reference_spend = gg_from_json(read_json(a.reference_spend));
  const Comparison cmp = compare(ds, opt);
  ensure_dir(a.out_dir);
  write_comparison(cmp, a.out_dir);
  out << render_accuracy_table(cmp.reports);
}

void add_train_config(CLI::App* c, TrainArgs& a) {
  c->add_option("--epochs", a.config.epochs, "Maximum training epochs")->capture_default_str();
  c->add_option("--batch-size", a.config.batch_size, "Mini-batch size")->capture_default_str();
  c->add_option("--learning-rate", a.config.learning_rate, "Adam step size")->capture_default_str();
  c->add_option("--validation-fraction", a.config.validation_fraction, "Held-out share for early stopping")
      ->capture_default_str();
  c->add_option("--patience", a.config.patience, "Epochs without improvement before stopping")->capture_default_str();
  c->add_option("--dropout", a.config.dropout, "Dropout on hidden layers")->capture_default_str();
  c->add_option("--hidden", a.hidden, "Comma-separated hidden widths (default 128,256,512,32)");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Customer lifetime value toolkit: transaction summaries, BTYD models, an MLP baseline and a simulator"};
  app.require_subcommand(1);
  app.allow_config_extras(false);
  app.set_config("--config-file", "", "Flat key = value file; command-line flags take precedence");
  Globals g;
  auto* seed_opt = app.add_option("--seed", g.seed, "Random seed")->capture_default_str();
  app.add_option("--threads", g.threads, "Worker threads for per-customer work")->capture_default_str()->check(
      CLI::Range(1, 1024));

  SummarizeArgs sa;
  auto* summarize = app.add_subcommand("summarize", "Clean transactions and write summaries, features and targets");
  summarize->add_option("--input", sa.input, "Transactions CSV")->required();
  summarize->add_option("--cutoff", sa.cutoff, "Last calibration day, YYYY-MM-DD")->required()->check(kIsoDate);
  summarize->add_option("--holdout-days", sa.holdout_days, "Holdout length in days")->capture_default_str();
  summarize->add_option("--out-dir", sa.out_dir, "Output directory")->required();
  summarize->add_option("--min-date", sa.min_date, "Declared first date of the dataset")->check(kIsoDate);
  summarize->add_option("--max-date", sa.max_date, "Declared last date of the dataset")->check(kIsoDate);

  FitArgs fa;
  auto* fit = app.add_subcommand("fit", "Maximum-likelihood fit of a statistical model");
  fit->add_option("model", fa.model, "pnbd, gg or pggg")->required()->check(CLI::IsMember({"pnbd", "gg", "pggg"}));
  fit->add_option("--summaries", fa.summaries, "summaries.csv")->required();
  fit->add_option("--interarrivals", fa.interarrivals, "Interarrival sidecar (default: next to the summaries)");
  fit->add_option("--out", fa.out, "Parameter JSON")->required();
  fit->add_option("--restarts", fa.restarts, "Jittered restarts")->capture_default_str()->check(CLI::NonNegativeNumber);
  fit->add_option("--max-evaluations", fa.max_evaluations, "Objective evaluations per start")->capture_default_str();
  fit->add_option("--warm-start", fa.warm_start, "pareto_nbd JSON used as the pggg starting point");

  TrainArgs ta;
  auto* trainc = app.add_subcommand("train", "Train the neural network");
  trainc->add_option("model", ta.model, "nn")->required()->check(CLI::IsMember({"nn"}));
  trainc->add_option("--features", ta.features, "Feature CSV")->required();
  trainc->add_option("--targets", ta.targets, "Target CSV (customer_id,holdout_count,holdout_revenue)")->required();
  trainc->add_option("--out", ta.out, "Model JSON")->required();
  trainc->add_option("--target", ta.target, "count or revenue")->capture_default_str()->check(
      CLI::IsMember({"count", "revenue"}));
  add_train_config(trainc, ta);

  PredictArgs pa;
  auto* predictc = app.add_subcommand("predict", "Score customers with a fitted model");
  predictc->add_option("--model", pa.model, "Model JSON")->required();
  auto* with_summaries = predictc->add_option("--summaries", pa.summaries, "summaries.csv for statistical models");
  auto* with_features = predictc->add_option("--features", pa.features, "Feature CSV for the network");
  with_summaries->excludes(with_features);
  predictc->add_option("--interarrivals", pa.interarrivals, "Interarrival sidecar for pggg models");
  predictc->add_option("--horizon-days", pa.horizon_days, "Forecast horizon")->capture_default_str()->check(
      CLI::NonNegativeNumber);
  predictc->add_option("--gg-model", pa.gg_model, "gamma_gamma JSON to add expected revenue");
  predictc->add_option("--draws", pa.draws, "Monte-Carlo draws per customer for pggg")->capture_default_str()->check(
      CLI::PositiveNumber);
  predictc->add_option("--out", pa.out, "Prediction CSV")->required();

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Generate a synthetic cohort with ground truth");
  simulate->add_option("--config", sim.config, "Simulation key = value file");
  simulate->add_option("--out-dir", sim.out_dir, "Output directory")->required();

  EvaluateArgs ea;
  auto* evaluate = app.add_subcommand("evaluate", "Holdout metrics for one prediction file");
  evaluate->add_option("--predictions", ea.predictions, "CSV with customer_id and a prediction column")->required();
  evaluate->add_option("--actuals", ea.actuals, "targets.csv or ground_truth.csv")->required();
  evaluate->add_option("--out", ea.out, "Output directory")->required();
  evaluate->add_option("--prediction-column", ea.prediction_column, "Prediction column")->capture_default_str();
  evaluate->add_option("--actual-column", ea.actual_column, "Actual column (default from --target)");
  evaluate->add_option("--target", ea.target, "count or revenue")->capture_default_str()->check(
      CLI::IsMember({"count", "revenue"}));
  evaluate->add_option("--name", ea.name, "Model name in the report")->capture_default_str();

  CompareArgs ca;
  auto* comparec = app.add_subcommand("compare", "Fit every model on the calibration window and compare on the holdout");
  comparec->add_option("--input", ca.input, "Transactions CSV")->required();
  comparec->add_option("--cutoff", ca.cutoff, "Last calibration day, YYYY-MM-DD")->required()->check(kIsoDate);
  comparec->add_option("--holdout-days", ca.holdout_days, "Holdout length in days")->capture_default_str();
  comparec->add_option("--out-dir", ca.out_dir, "Output directory")->required();
  comparec->add_option("--target", ca.target, "count or revenue")->capture_default_str()->check(
      CLI::IsMember({"count", "revenue"}));
  comparec->add_option("--reference-model", ca.reference_model, "True-parameter JSON (pareto_nbd or pggg_global_k)");
  comparec->add_option("--reference-spend", ca.reference_spend, "True gamma_gamma JSON for revenue targets");
  comparec->add_option("--restarts", ca.restarts, "Jittered restarts per fit")->capture_default_str();
  comparec->add_option("--draws", ca.draws, "Monte-Carlo draws per pggg forecast")->capture_default_str()->check(
      CLI::PositiveNumber);
  comparec->add_option("--epochs", ca.epochs, "Maximum network epochs")->capture_default_str();
  comparec->add_option("--batch-size", ca.batch_size, "Network mini-batch size")->capture_default_str();
  comparec->add_option("--patience", ca.patience, "Early-stopping patience")->capture_default_str();
  comparec->add_option("--learning-rate", ca.learning_rate, "Network step size")->capture_default_str();
  comparec->add_option("--min-date", ca.min_date, "Declared first date of the dataset")->check(kIsoDate);
  comparec->add_option("--max-date", ca.max_date, "Declared last date of the dataset")->check(kIsoDate);
  comparec->add_flag("--no-pggg", ca.no_pggg, "Skip the regularity model");
  comparec->add_flag("--no-nn", ca.no_nn, "Skip the neural network");

  std::vector<std::string> argv_store = args.empty() ? std::vector<std::string>{"clv"} : args;
  std::vector<char*> argv;
  for (auto& s : argv_store) argv.push_back(s.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  out << "# resolved configuration\n" << app.config_to_str(true, false) << "# seed = " << g.seed << '\n';
  try {
    set_thread_count(g.threads);
    if (summarize->parsed()) do_summarize(sa, out);
    if (fit->parsed()) do_fit(fa, g, out);
    if (trainc->parsed()) do_train(ta, g, out);
    if (predictc->parsed()) do_predict(pa, g, out);
    if (simulate->parsed()) do_simulate(sim, g, seed_opt->count() > 0, out);
    if (evaluate->parsed()) do_evaluate(ea, out);
    if (comparec->parsed()) do_compare(ca, g, out);
  } catch (const CLI::Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitOk;
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace clv
