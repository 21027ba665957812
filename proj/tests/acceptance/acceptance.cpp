// Acceptance checks. Each criterion prints one PASS/FAIL line; the process
// exits nonzero if any selected criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "clv/cli.hpp"
#include "clv/data_pipeline.hpp"
#include "clv/evaluation.hpp"
#include "clv/neural_net.hpp"
#include "clv/pareto_nbd.hpp"
#include "clv/persistence.hpp"
#include "clv/regularity.hpp"
#include "clv/simulation.hpp"
#include "clv/special.hpp"
#include "oracles.hpp"

using namespace clv;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

class Stopwatch {
 public:
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count(); }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(const char* format, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, format, args...);
  return buf;
}

CustomerSummary summary_with_gaps(std::vector<double> gaps, double T, std::string id = "c") {
  CustomerSummary s;
  s.customer_id = std::move(id);
  s.x = static_cast<int>(gaps.size());
  for (double g : gaps) s.t_x += g;
  s.T = T;
  s.interarrivals = std::move(gaps);
  if (s.x > 0) s.m_bar = 10.0;
  return s;
}

// x equal gaps ending at t_x.
CustomerSummary profile_summary(int x, double t_x, double T, std::string id = "c") {
  std::vector<double> gaps(x, x > 0 ? t_x / x : 0.0);
  auto s = summary_with_gaps(gaps, T, std::move(id));
  s.t_x = t_x;
  return s;
}

CustomerSummary random_summary(std::mt19937_64& rng) {
  const int x = static_cast<int>(rng() % 9);
  const double T = 10 + static_cast<double>(rng() % 700);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  std::vector<double> gaps(x);
  double total = 0;
  for (auto& g : gaps) total += g = u(rng);
  const double t_x = x == 0 ? 0.0 : T * u(rng);
  for (auto& g : gaps) g *= t_x / total;
  auto s = summary_with_gaps(gaps, T);
  s.t_x = t_x;
  return s;
}

std::vector<CustomerSummary> continuous_cohort(const RegularityParams& truth, int n, double days,
                                               std::uint64_t seed) {
  std::vector<CustomerSummary> rows(n);
  parallel_for(n, [&](std::size_t i) {
    Rng rng = substream(seed, i);
    rows[i] = summarize_simulated(simulate_customer(truth, {6, 4, 15}, days, 0.0, rng), days,
                                  "c" + std::to_string(i));
  });
  return rows;
}

double rel(double a, double b) { return std::abs(a - b) / std::abs(b); }

struct OracleInstance {
  PnbdParams params;
  oracle::Profile profile;
};

const std::vector<OracleInstance>& oracle_instances() {
  static const std::vector<OracleInstance> v{
      {{0.5, 10, 0.5, 10}, {2, 30, 50}},
      {{0.55, 10.6, 0.61, 11.7}, {1, 5, 20}},
      {{0.5, 10, 0.5, 10}, {1, 10, 25}},
      {{1.2, 8, 0.9, 20}, {2, 15, 20}},
      {{0.8, 8, 0.3, 5}, {1, 5, 30}},
  };
  return v;
}

constexpr double kOracleTolerance = 0.5;  // days, |last repeat - t_x|
constexpr double kHorizon = 182;
constexpr std::size_t kOracleAccepted = 1'000'000;

oracle::PosteriorSample run_oracle(const OracleInstance& inst, std::uint64_t seed) {
  const auto& p = inst.params;
  return oracle::rejection_posterior(p.r, p.alpha, p.s, p.beta, 1.0, inst.profile, kOracleTolerance, kHorizon,
                                     kOracleAccepted, seed);
}

// ---------------------------------------------------------------------------

Verdict criterion_1() {
  Stopwatch clock;
  QuadratureGrid grid;
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> shape(0.1, 5.0), scale(1.0, 50.0);
  double worst = 0;
  for (int i = 0; i < 100; ++i) {
    RegularityParams p{shape(rng), scale(rng), shape(rng), scale(rng), 1.0};
    auto c = random_summary(rng);
    worst = std::max(worst, std::abs(pnbd_loglik(p.pnbd(), c) - mixed_loglik(p, c, grid)));
  }
  const double t = clock.seconds();
  return {worst < 1e-4 && t < 30, fmt("max |diff| %.3g (< 1e-4), %.1f s (< 30 s)", worst, t)};
}

Verdict criterion_2() {
  Stopwatch clock;
  const RegularityParams truth{0.55, 10.6, 0.61, 11.7, 1.0};
  auto rows = continuous_cohort(truth, 20'000, 728, 2002);
  auto fit = fit_pnbd(rows);
  const double t = clock.seconds();
  const auto& f = fit.params;
  const double worst = std::max({rel(f.r, truth.r), rel(f.alpha, truth.alpha), rel(f.s, truth.s), rel(f.beta, truth.beta)});
  return {worst < 0.15 && t < 300,
          fmt("fit (%.4f, %.3f, %.4f, %.3f), worst rel err %.3f (< 0.15), %.0f s (< 300 s)", f.r, f.alpha, f.s,
              f.beta, worst, t)};
}

Verdict criterion_3() {
  Stopwatch clock;
  FitOptions opt;
  opt.restarts = 1;
  std::string detail;
  bool pass = true;
  for (double k : {1.0, 2.0}) {
    const RegularityParams truth{0.55, 10.6, 0.61, 11.7, k};
    auto rows = continuous_cohort(truth, 20'000, 728, 3000 + static_cast<std::uint64_t>(k));
    auto fit = fit_pggg(rows, opt);
    const double fk = fit.params.k;
    bool ok = std::abs(fk - k) <= 0.2 * k;
    if (k == 1.0) ok = ok && fk >= 0.85 && fk <= 1.15;
    pass = pass && ok;
    detail += fmt("k=%g fitted %.4f; ", k, fk);
  }
  const double t = clock.seconds();
  pass = pass && t < 1200;
  return {pass, detail + fmt("%.0f s (< 1200 s)", t)};
}

Verdict criterion_4() {
  double worst = 0;
  std::string detail;
  std::uint64_t seed = 400;
  for (const auto& inst : oracle_instances()) {
    const auto mc = run_oracle(inst, ++seed);
    const auto& pr = inst.profile;
    const double analytic = p_alive(inst.params, profile_summary(pr.x, pr.t_x, pr.T));
    worst = std::max(worst, std::abs(analytic - mc.alive_fraction));
    detail += fmt("%.4f/%.4f ", analytic, mc.alive_fraction);
  }
  return {worst <= 0.01, fmt("analytic/sampled %smax |diff| %.4f (<= 0.01)", detail.c_str(), worst)};
}

Verdict criterion_5() {
  QuadratureGrid grid;
  double worst_rel = 0, worst_se = 0;
  std::uint64_t seed = 500;
  for (const auto& inst : oracle_instances()) {
    const auto mc = run_oracle(inst, ++seed);
    const auto& pr = inst.profile;
    auto c = profile_summary(pr.x, pr.t_x, pr.T, "oracle" + std::to_string(seed));
    const double analytic = expected_transactions(inst.params, c, kHorizon);
    worst_rel = std::max(worst_rel, rel(analytic, mc.mean_future));
    const auto fc = forecast_mc(RegularityParams::from_pnbd(inst.params), c, kHorizon, 200'000, seed, grid);
    worst_se = std::max(worst_se, std::abs(fc.mean - analytic) / fc.std_error);
  }
  return {worst_rel < 0.02 && worst_se < 3,
          fmt("max rel err vs simulation %.4f (< 0.02), max forecast_mc deviation %.2f SE (< 3)", worst_rel, worst_se)};
}

Verdict criterion_6() {
  std::mt19937_64 rng(606);
  std::uniform_real_distribution<double> ab(0.1, 30.0), cc(0.5, 40.0), zz(0.0, 0.95);
  double worst = 0;
  for (int i = 0; i < 50; ++i) {
    const double a = ab(rng), b = ab(rng), c = cc(rng), z = zz(rng);
    const double exact = static_cast<double>(log(oracle::hyp2f1_series(a, b, c, z)));
    worst = std::max(worst, std::abs(std::expm1(log_hyp2f1(a, b, c, z) - exact)));
  }
  return {worst < 1e-10, fmt("max rel err %.3g (< 1e-10)", worst)};
}

Verdict criterion_7() {
  double worst = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    auto model = make_mlp({7, 4, 1}, 700 + seed);
    for (auto& layer : model.layers) layer.bias.setConstant(0.1);
    Rng rng = substream(700 + seed, 1);
    std::normal_distribution<double> z;
    Eigen::MatrixXd x(8, 7);
    for (int i = 0; i < x.size(); ++i) x.data()[i] = z(rng);
    std::vector<double> y(8);
    for (auto& v : y) v = std::abs(z(rng));
    const auto lg = loss_and_gradient(model, x, y);
    const double h = 1e-5;
    auto probe = [&](double& param, double analytic) {
      const double saved = param;
      param = saved + h;
      const double up = loss_and_gradient(model, x, y).loss;
      param = saved - h;
      const double down = loss_and_gradient(model, x, y).loss;
      param = saved;
      const double numeric = (up - down) / (2 * h);
      const double scale = std::max(std::abs(analytic), std::abs(numeric));
      if (scale > 1e-8) worst = std::max(worst, std::abs(analytic - numeric) / scale);
    };
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
      auto& L = model.layers[l];
      for (int i = 0; i < L.weights.rows(); ++i)
        for (int j = 0; j < L.weights.cols(); ++j) probe(L.weights(i, j), lg.grad.weights[l](i, j));
      for (int i = 0; i < L.bias.size(); ++i) probe(L.bias(i), lg.grad.bias[l](i));
    }
  }
  return {worst < 1e-4, fmt("max rel err %.3g (< 1e-4)", worst)};
}

Verdict criterion_8() {
  Stopwatch clock;
  SimConfig cfg;
  cfg.n_customers = 50'000;
  cfg.acquisition_window_days = 365;
  cfg.seed = 808;
  auto ds = clean_transactions(simulate_cohort(cfg).transactions);
  SplitConfig split{cfg.calibration_end(), cfg.holdout_days};
  auto rows = make_feature_table(ds.transactions, split.calibration_end);
  auto targets = holdout_targets(ds.transactions, split);

  // Every fifth customer is a test row the network never sees.
  std::vector<FeatureRow> train_rows, test_rows;
  std::vector<double> train_y, test_y;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double y = targets.at(rows[i].customer_id).count;
    (i % 5 == 4 ? test_rows : train_rows).push_back(rows[i]);
    (i % 5 == 4 ? test_y : train_y).push_back(y);
  }
  TrainConfig tc;
  tc.epochs = 20;
  const auto x_train = feature_matrix(train_rows);
  auto a = train(x_train, train_y, tc);
  auto b = train(x_train, train_y, tc);
  bool identical = a.history.train_loss == b.history.train_loss &&
                   a.history.validation_loss == b.history.validation_loss;
  for (std::size_t l = 0; l < a.model.layers.size(); ++l)
    identical = identical && a.model.layers[l].weights == b.model.layers[l].weights &&
                a.model.layers[l].bias == b.model.layers[l].bias;

  const double mean = std::accumulate(train_y.begin(), train_y.end(), 0.0) / train_y.size();
  const auto preds = predict(a.model, feature_matrix(test_rows));
  double model_mse = 0, baseline_mse = 0;
  for (std::size_t i = 0; i < test_y.size(); ++i) {
    model_mse += (preds[i] - test_y[i]) * (preds[i] - test_y[i]);
    baseline_mse += (mean - test_y[i]) * (mean - test_y[i]);
  }
  model_mse /= test_y.size();
  baseline_mse /= test_y.size();
  const double t = clock.seconds();
  return {model_mse < baseline_mse && identical && t < 600,
          fmt("held-out MSE %.4f vs constant-mean %.4f, repeat run %s, %.0f s (< 600 s)", model_mse, baseline_mse,
              identical ? "bit-identical" : "DIFFERENT", t)};
}

struct CliOutcome {
  int code = 0;
  std::string err;
};

CliOutcome cli(std::vector<std::string> args) {
  args.insert(args.begin(), "clv");
  std::ostringstream out, err;
  CliOutcome o;
  o.code = run(args, out, err);
  o.err = err.str();
  return o;
}

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("clv_acceptance_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_text_file(const fs::path& path, const std::string& text) { std::ofstream(path, std::ios::binary) << text; }

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Verdict criterion_9() {
  auto dir = scratch("compare");
  write_text_file(dir / "sim.cfg",
                  "n_customers = 5000\nobservation_days = 728\nholdout_days = 182\nacquisition_window_days = 365\n"
                  "seed = 909\nk = 1\n");
  if (auto r = cli({"simulate", "--config", (dir / "sim.cfg").string(), "--out-dir", (dir / "sim").string()});
      r.code != 0)
    return {false, "simulate failed: " + r.err};
  if (auto r = cli({"compare", "--input", (dir / "sim" / "transactions.csv").string(), "--cutoff", "2020-06-30",
                    "--max-date", "2020-12-29", "--reference-model", (dir / "sim" / "true_pnbd.json").string(),
                    "--restarts", "1", "--draws", "300", "--epochs", "10", "--out-dir", (dir / "cmp").string()});
      r.code != 0)
    return {false, "compare failed: " + r.err};
  const auto doc = read_json(dir / "cmp" / "comparison.json");
  double fitted = NAN, reference = NAN;
  for (const auto& r : doc.at("reports")) {
    const auto name = r.at("model").get<std::string>();
    if (name == "Pareto/NBD") fitted = r.at("aggregate_accuracy").get<double>();
    if (name.rfind("Reference", 0) == 0) reference = r.at("aggregate_accuracy").get<double>();
  }
  const double gap = std::abs(fitted - reference);
  return {gap <= 0.05, fmt("fitted %.4f, reference %.4f, |diff| %.4f (<= 0.05)", fitted, reference, gap)};
}

Verdict criterion_10() {
  const RegularityParams truth{0.55, 10.6, 0.61, 11.7, 3.0};
  auto rows = continuous_cohort(truth, 5000, 364, 1010);
  FitOptions opt;
  opt.restarts = 0;
  auto fit = fit_pggg(rows, opt);
  QuadratureGrid grid;
  const auto regular = summary_with_gaps({20, 20, 20, 20}, 100, "regular");
  const auto irregular = summary_with_gaps({5, 35, 10, 30}, 100, "irregular");
  const double pr = p_alive_k(fit.params, regular, grid);
  const double pi = p_alive_k(fit.params, irregular, grid);
  // Differences at the level of quadrature rounding do not count as lower.
  const bool pass = fit.params.k > 1.0 && pr < pi - 1e-9;
  return {pass, fmt("fitted k %.3f, p_alive_k regular %.12f, irregular %.12f, diff %.3g", fit.params.k, pr, pi,
                    pi - pr)};
}

Verdict criterion_11() {
  auto root = scratch("determinism");
  write_text_file(root / "sim.cfg",
                  "n_customers = 800\nobservation_days = 728\nholdout_days = 182\nacquisition_window_days = 365\n"
                  "seed = 1111\n");
  for (const char* name : {"run1", "run2"}) {
    const auto o = root / name;
    const auto sim = (o / "sim").string();
    const auto tx = sim + "/transactions.csv";
    const auto s = (o / "s").string();
    const std::vector<std::vector<std::string>> steps{
        {"simulate", "--config", (root / "sim.cfg").string(), "--out-dir", sim},
        {"summarize", "--input", tx, "--cutoff", "2020-06-30", "--max-date", "2020-12-29", "--out-dir", s},
        {"fit", "pnbd", "--summaries", s + "/summaries.csv", "--restarts", "1", "--out", (o / "pnbd.json").string()},
        {"fit", "gg", "--summaries", s + "/summaries.csv", "--out", (o / "gg.json").string()},
        {"fit", "pggg", "--summaries", s + "/summaries.csv", "--restarts", "0", "--warm-start",
         (o / "pnbd.json").string(), "--out", (o / "pggg.json").string()},
        {"train", "nn", "--features", s + "/train_features.csv", "--targets", s + "/train_targets.csv", "--epochs",
         "5", "--out", (o / "nn.json").string()},
        {"predict", "--model", (o / "pnbd.json").string(), "--summaries", s + "/summaries.csv", "--gg-model",
         (o / "gg.json").string(), "--out", (o / "pred_pnbd.csv").string()},
        {"predict", "--model", (o / "pggg.json").string(), "--summaries", s + "/summaries.csv", "--draws", "300",
         "--out", (o / "pred_pggg.csv").string()},
        {"predict", "--model", (o / "nn.json").string(), "--features", s + "/features.csv", "--out",
         (o / "pred_nn.csv").string()},
        {"evaluate", "--predictions", (o / "pred_pnbd.csv").string(), "--actuals", s + "/targets.csv", "--out",
         (o / "eval").string()},
        {"compare", "--input", tx, "--cutoff", "2020-06-30", "--max-date", "2020-12-29", "--restarts", "0",
         "--draws", "200", "--epochs", "5", "--reference-model", sim + "/true_pnbd.json", "--out-dir",
         (o / "cmp").string()},
    };
    for (const auto& step : steps) {
      if (auto r = cli(step); r.code != 0) return {false, step.front() + " failed: " + r.err};
    }
  }
  std::size_t compared = 0;
  std::vector<std::string> differing;
  for (const auto& entry : fs::recursive_directory_iterator(root / "run1")) {
    if (!entry.is_regular_file() || entry.path().filename() == "timings.json") continue;
    const auto relpath = fs::relative(entry.path(), root / "run1");
    ++compared;
    const auto other = root / "run2" / relpath;
    if (!fs::exists(other) || read_text_file(entry.path()) != read_text_file(other))
      differing.push_back(relpath.string());
  }
  std::string detail = fmt("%zu artifacts from 11 commands compared", compared);
  for (const auto& d : differing) detail += ", differs: " + d;
  return {differing.empty() && compared > 20, detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  int only = 0;
  app.add_option("--only", only, "Run a single criterion (1-11)")->check(CLI::Range(1, 11));
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::function<Verdict()>> criteria{criterion_1, criterion_2, criterion_3,  criterion_4,
                                                       criterion_5, criterion_6, criterion_7,  criterion_8,
                                                       criterion_9, criterion_10, criterion_11};
  int failures = 0;
  for (int n = 1; n <= static_cast<int>(criteria.size()); ++n) {
    if (only != 0 && n != only) continue;
    Verdict v;
    try {
      v = criteria[n - 1]();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    std::printf("criterion %d: %s (%s)\n", n, v.pass ? "PASS" : "FAIL", v.detail.c_str());
    std::fflush(stdout);
    failures += v.pass ? 0 : 1;
  }
  return failures == 0 ? 0 : 1;
}
