#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "clv/evaluation.hpp"
#include "clv/persistence.hpp"
#include "clv/simulation.hpp"
#include "test_support.hpp"

using namespace clv;

namespace {

KeyedValues keyed(const std::vector<double>& v) {
  KeyedValues out;
  for (std::size_t i = 0; i < v.size(); ++i) out.emplace_back("c" + std::to_string(i), v[i]);
  return out;
}

Dataset small_cohort(SimConfig& cfg) {
  cfg.n_customers = 1500;
  cfg.observation_days = 546;
  cfg.holdout_days = 182;
  cfg.acquisition_window_days = 200;
  return clean_transactions(simulate_cohort(cfg).transactions);
}

CompareOptions quick_options(const SimConfig& cfg) {
  CompareOptions opt;
  opt.split = {cfg.calibration_end(), cfg.holdout_days};
  opt.fit.restarts = 0;
  opt.forecast_draws = 200;
  opt.nn.hidden = {16, 8};
  opt.nn.epochs = 5;
  return opt;
}

}  // namespace

TEST_CASE("identity predictions") {
  std::vector<double> v{0, 3, 1, 4, 1, 5, 9, 2, 6};
  auto r = compute_metrics(v, v, TargetKind::kCount, "self");
  CHECK(r.aggregate_accuracy == 1.0);
  CHECK(r.mae == 0.0);
  CHECK(r.rmse == 0.0);
  CHECK(r.rank_correlation == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(r.n_customers == v.size());
  CHECK(r.model_name == "self");
}

TEST_CASE("aggregate accuracy clamps at zero") {
  std::vector<double> act{1, 2, 3}, pred{2, 4, 6};
  CHECK(compute_metrics(pred, act, TargetKind::kCount).aggregate_accuracy == 0.0);
  std::vector<double> close{1, 2, 2.7};
  CHECK(compute_metrics(close, act, TargetKind::kCount).aggregate_accuracy == doctest::Approx(0.95));
  std::vector<double> zeros{0, 0, 0};
  auto r = compute_metrics(close, zeros, TargetKind::kCount);
  CHECK(r.aggregate_accuracy == 0.0);
  CHECK(r.top_decile_lift == 1.0);
  CHECK(r.rank_correlation == 0.0);
}

TEST_CASE("two-row accuracy table") {
  EvalReport a, b;
  a.model_name = "Pareto/GGG";
  a.aggregate_accuracy = 0.886;
  b.model_name = "Neural Network";
  b.aggregate_accuracy = 0.946;
  std::vector<EvalReport> reports{a, b};
  const std::string table = render_accuracy_table(reports);
  CHECK(table.find("% Accuracy on hold-out period") != std::string::npos);
  CHECK(table.find("88.6%") != std::string::npos);
  CHECK(table.find("94.6%") != std::string::npos);
  CHECK(table.find("Pareto/GGG") < table.find("Neural Network"));
  // Header, rule, and one line per model.
  CHECK(std::count(table.begin(), table.end(), '\n') == 4);
  CHECK(render_metric_table(reports).find("Neural Network") != std::string::npos);
}

TEST_CASE("Spearman with ties and top-decile lift") {
  std::vector<double> a{1, 2, 2, 3}, b{10, 20, 20, 30};
  CHECK(spearman(a, b) == doctest::Approx(1.0));
  CHECK(average_ranks(a) == std::vector<double>{1, 2.5, 2.5, 4});
  std::vector<double> rev{4, 3, 2, 1}, fwd{1, 2, 3, 4};
  CHECK(spearman(rev, fwd) == doctest::Approx(-1.0));

  // 20 customers: ceil(20/10) = 2 in the top decile.
  std::vector<double> pred(20), act(20, 1.0);
  for (int i = 0; i < 20; ++i) pred[i] = i;
  act[19] = 11;
  act[18] = 9;
  auto r = compute_metrics(pred, act, TargetKind::kCount);
  CHECK(r.top_decile_lift == doctest::Approx(10.0 / (38.0 / 20.0)));
}

TEST_CASE("metrics are invariant to customer order and common scaling") {
  std::mt19937_64 rng(5);
  std::gamma_distribution<double> g(0.8, 2.0);
  std::vector<double> pred(500), act(500);
  for (auto& v : pred) v = g(rng);
  for (auto& v : act) v = std::floor(g(rng));
  auto base = compute_metrics(keyed(pred), keyed(act), TargetKind::kCount);

  auto kp = keyed(pred), ka = keyed(act);
  std::shuffle(kp.begin(), kp.end(), rng);
  std::shuffle(ka.begin(), ka.end(), rng);
  CHECK(compute_metrics(kp, ka, TargetKind::kCount) == base);

  std::vector<std::size_t> perm(pred.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<double> pp, pa;
  for (auto i : perm) {
    pp.push_back(pred[i]);
    pa.push_back(act[i]);
  }
  auto shuffled = compute_metrics(pp, pa, TargetKind::kCount);
  CHECK(shuffled.aggregate_accuracy == doctest::Approx(base.aggregate_accuracy).epsilon(1e-12));
  CHECK(shuffled.rank_correlation == doctest::Approx(base.rank_correlation).epsilon(1e-12));
  CHECK(shuffled.top_decile_lift == doctest::Approx(base.top_decile_lift).epsilon(1e-12));

  std::vector<double> sp, sa;
  for (double v : pred) sp.push_back(7.5 * v);
  for (double v : act) sa.push_back(7.5 * v);
  auto scaled = compute_metrics(keyed(sp), keyed(sa), TargetKind::kRevenue);
  CHECK(scaled.aggregate_accuracy == doctest::Approx(base.aggregate_accuracy).epsilon(1e-12));
  CHECK(scaled.rank_correlation == doctest::Approx(base.rank_correlation).epsilon(1e-12));
  CHECK(scaled.top_decile_lift == doctest::Approx(base.top_decile_lift).epsilon(1e-12));
  CHECK(scaled.mae == doctest::Approx(7.5 * base.mae).epsilon(1e-12));
  CHECK(scaled.rmse == doctest::Approx(7.5 * base.rmse).epsilon(1e-12));
}

TEST_CASE("mismatched ids are listed") {
  KeyedValues pred{{"a", 1}, {"b", 2}}, act{{"a", 1}, {"z", 2}};
  try {
    compute_metrics(pred, act, TargetKind::kCount);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("b") != std::string::npos);
    CHECK(msg.find("z") != std::string::npos);
  }
  KeyedValues many, none{{"only", 1}};
  for (int i = 0; i < 9; ++i) many.emplace_back("id" + std::to_string(i), 1.0);
  try {
    compute_metrics(many, none, TargetKind::kCount);
  } catch (const DataError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("id4") != std::string::npos);
    CHECK(msg.find("id5") == std::string::npos);
  }
  CHECK_THROWS_AS(compute_metrics(std::vector<double>{}, std::vector<double>{}, TargetKind::kCount), DataError);
}

TEST_CASE("a model compared against itself") {
  std::vector<double> pred{1.5, 0.2, 3.0}, act{1, 0, 4};
  auto a = compute_metrics(pred, act, TargetKind::kCount, "m");
  auto b = compute_metrics(pred, act, TargetKind::kCount, "m");
  CHECK(a == b);
  CHECK(to_json(a) == to_json(b));
}

TEST_CASE("target kind names") {
  CHECK(to_string(TargetKind::kRevenue) == "revenue");
  CHECK(parse_target_kind("count") == TargetKind::kCount);
  CHECK_THROWS(parse_target_kind("profit"));
}

TEST_CASE("compare uses calibration rows only") {
  SimConfig cfg;
  const Dataset full = small_cohort(cfg);
  const auto opt = quick_options(cfg);

  // Scramble every holdout row; nothing fitted may change.
  Dataset scrambled = full;
  for (auto& t : scrambled.transactions) {
    if (t.date > opt.split.calibration_end) {
      t.amount *= 3.0;
      t.coupon_used = !t.coupon_used;
    }
  }
  scrambled.transactions.push_back({"C0000001", opt.split.calibration_end + 5, 999.0, true});
  scrambled = clean_transactions(scrambled.transactions);

  auto a = compare(full, opt);
  auto b = compare(scrambled, opt);
  CHECK(a.pnbd_fit->params == b.pnbd_fit->params);
  CHECK(a.gg_fit->params == b.gg_fit->params);
  CHECK(a.pggg_fit->params == b.pggg_fit->params);
  REQUIRE(a.nn_model);
  for (std::size_t l = 0; l < a.nn_model->layers.size(); ++l)
    CHECK(a.nn_model->layers[l].weights == b.nn_model->layers[l].weights);
  CHECK(a.document["parameters"] == b.document["parameters"]);
  CHECK(a.document["calibration_end"] == format_date(opt.split.calibration_end));

  REQUIRE(a.reports.size() == 3);
  for (const auto& r : a.reports) CHECK(r.n_customers == a.customer_ids.size());
  for (const auto& t : a.timings) {
    CHECK(t.predict_seconds > 0.0);
    CHECK(t.fit_seconds > 0.0);
  }
  CHECK(a.timings.front().model == "Pareto/NBD");
  CHECK(a.timings.back().model == "Neural Network");
}

TEST_CASE("compare artifacts") {
  SimConfig cfg;
  const Dataset ds = small_cohort(cfg);
  auto opt = quick_options(cfg);
  opt.include_pggg = false;
  opt.reference = cfg.params;
  opt.reference_spend = cfg.spend;
  auto cmp = compare(ds, opt);
  REQUIRE(cmp.reports.size() == 3);
  CHECK(cmp.reports.back().model_name == "Reference (true parameters)");
  auto dir = test::scratch_dir("compare");
  write_comparison(cmp, dir);
  for (const char* f : {"comparison.json", "comparison.txt", "predictions.csv", "timings.json"})
    CHECK(std::filesystem::exists(dir / f));
  CHECK(test::read_file(dir / "comparison.txt").find("% Accuracy on hold-out period") != std::string::npos);
  CHECK(read_header(dir / "predictions.csv").front() == "customer_id");

  opt.target = TargetKind::kRevenue;
  auto rev = compare(ds, opt);
  CHECK(rev.reports.front().target_kind == TargetKind::kRevenue);
  CHECK(rev.document["target_kind"] == "revenue");
}
