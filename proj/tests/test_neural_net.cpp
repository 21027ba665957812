#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "clv/data_pipeline.hpp"
#include "clv/neural_net.hpp"
#include "clv/simulation.hpp"

using namespace clv;

namespace {

struct Table {
  Eigen::MatrixXd features;
  std::vector<double> targets;
};

Table simulated_table(int n, std::uint64_t seed) {
  SimConfig cfg;
  cfg.n_customers = n;
  cfg.observation_days = 364;
  cfg.holdout_days = 182;
  cfg.acquisition_window_days = 300;
  cfg.seed = seed;
  auto cohort = simulate_cohort(cfg);
  auto ds = clean_transactions(cohort.transactions);
  SplitConfig split{cfg.calibration_end(), cfg.holdout_days};
  auto rows = make_feature_table(ds.transactions, split.calibration_end);
  auto targets = holdout_targets(ds.transactions, split);
  Table t{feature_matrix(rows), {}};
  for (const auto& r : rows) t.targets.push_back(targets.at(r.customer_id).count);
  return t;
}

double mse(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / a.size();
}

TrainConfig small_config() {
  TrainConfig c;
  c.hidden = {16, 8};
  c.epochs = 40;
  c.batch_size = 64;
  c.learning_rate = 3e-3;
  return c;
}

}  // namespace

TEST_CASE("default architecture") {
  auto model = make_mlp({7, 128, 256, 512, 32, 1}, 1);
  CHECK(model.widths() == std::vector<int>{7, 128, 256, 512, 32, 1});
  for (const auto& layer : model.layers) {
    CHECK(layer.activation == Activation::kRelu);
    CHECK(layer.dropout == 0.0);
  }
  TrainConfig defaults;
  CHECK(defaults.hidden == std::vector<int>{128, 256, 512, 32});
  CHECK(defaults.batch_size == 256);
  CHECK(defaults.learning_rate == 1e-3);
  std::vector<double> x{1, 2, 3, 4, 5, 6, 7};
  auto acts = forward_activations(model, x);
  REQUIRE(acts.size() == 5);
  std::vector<long> widths;
  for (const auto& a : acts) widths.push_back(a.size());
  CHECK(widths == std::vector<long>{128, 256, 512, 32, 1});
  CHECK(forward(model, x) >= 0.0);
}

TEST_CASE("zero network outputs zero") {
  auto model = make_mlp({7, 128, 256, 512, 32, 1}, 2);
  for (auto& layer : model.layers) {
    layer.weights.setZero();
    layer.bias.setZero();
  }
  std::vector<double> x{3, -1, 4, 1, -5, 9, 2};
  CHECK(forward(model, x) == 0.0);
}

TEST_CASE("single ReLU unit") {
  auto model = make_mlp({1, 1}, 3);
  model.layers[0].weights(0, 0) = 1.0;
  model.layers[0].bias(0) = 0.0;
  model.input_width = 1;
  model.scaler = Scaler::identity(1);
  std::vector<double> pos{3.0}, neg{-3.0};
  CHECK(forward(model, pos) == 3.0);
  CHECK(forward(model, neg) == 0.0);

  model.layers[0].weights(0, 0) = 2.0;
  Eigen::MatrixXd one(1, 1);
  one(0, 0) = 1.0;
  std::vector<double> y{1.0};
  auto lg = loss_and_gradient(model, one, y);
  CHECK(lg.loss == 1.0);
  CHECK(lg.grad.weights[0](0, 0) == 2.0);
  CHECK(lg.grad.bias[0](0) == 2.0);
}

TEST_CASE("width mismatch is a shape error") {
  auto model = make_mlp({7, 4, 1}, 4);
  std::vector<double> six(6, 1.0);
  CHECK_THROWS_AS(forward(model, six), ShapeError);
  CHECK_THROWS_AS(predict(model, Eigen::MatrixXd::Ones(3, 5)), ShapeError);
}

TEST_CASE("perfect predictions have zero loss and zero gradient") {
  auto model = make_mlp({7, 4, 1}, 5);
  Eigen::MatrixXd x = Eigen::MatrixXd::Random(6, 7);
  std::vector<double> y = predict(model, x);
  auto lg = loss_and_gradient(model, x, y);
  CHECK(lg.loss == 0.0);
  for (const auto& g : lg.grad.weights) CHECK(g.cwiseAbs().maxCoeff() == 0.0);
  for (const auto& g : lg.grad.bias) CHECK(g.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("gradients match central differences") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    auto model = make_mlp({7, 4, 1}, seed);
    for (auto& layer : model.layers) layer.bias.setConstant(0.1);
    Rng rng = substream(seed, 99);
    std::normal_distribution<double> z;
    Eigen::MatrixXd x(8, 7);
    for (int i = 0; i < x.size(); ++i) x.data()[i] = z(rng);
    std::vector<double> y(8);
    for (auto& v : y) v = std::abs(z(rng));
    const auto lg = loss_and_gradient(model, x, y);
    const double h = 1e-5;
    double worst = 0;
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
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
      auto& L = model.layers[l];
      for (int i = 0; i < L.weights.rows(); ++i)
        for (int j = 0; j < L.weights.cols(); ++j) probe(L.weights(i, j), lg.grad.weights[l](i, j));
      for (int i = 0; i < L.bias.size(); ++i) probe(L.bias(i), lg.grad.bias[l](i));
    }
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("non-finite inputs name the row") {
  auto model = make_mlp({7, 4, 1}, 6);
  Eigen::MatrixXd x = Eigen::MatrixXd::Ones(4, 7);
  x(2, 3) = NAN;
  std::vector<double> y(4, 1.0);
  try {
    loss_and_gradient(model, x, y);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find('2') != std::string::npos);
  }
}

TEST_CASE("training beats the constant baseline and is reproducible") {
  auto table = simulated_table(4000, 7);
  TrainConfig cfg;
  cfg.epochs = 25;
  auto a = train(table.features, table.targets, cfg);
  auto b = train(table.features, table.targets, cfg);
  CHECK(a.history.train_loss == b.history.train_loss);
  CHECK(a.history.validation_loss == b.history.validation_loss);
  for (std::size_t l = 0; l < a.model.layers.size(); ++l) {
    CHECK(a.model.layers[l].weights == b.model.layers[l].weights);
    CHECK(a.model.layers[l].bias == b.model.layers[l].bias);
  }
  // Validation rows are the ones the model never trained on; compare the
  // best validation loss with the constant predictor on the whole table.
  const double mean = std::accumulate(table.targets.begin(), table.targets.end(), 0.0) / table.targets.size();
  double baseline = 0;
  for (double t : table.targets) baseline += (t - mean) * (t - mean);
  baseline /= table.targets.size();
  const double best = a.history.validation_loss[a.history.best_epoch - 1];
  CHECK(best < baseline);

  auto preds = predict(a.model, table.features);
  CHECK(std::all_of(preds.begin(), preds.end(), [](double v) { return v >= 0.0; }));
  CHECK(mse(preds, table.targets) < baseline);
  for (int i : {0, 17, 301}) {
    Eigen::VectorXd r = table.features.row(i).transpose();
    CHECK(forward(a.model, std::span<const double>(r.data(), 7)) == preds[i]);
  }
  // Batches carry no state across rows.
  Eigen::MatrixXd head = table.features.topRows(37);
  auto part = predict(a.model, head);
  CHECK(std::equal(part.begin(), part.end(), preds.begin()));

  // Scaler statistics come from the training split only.
  auto full = Scaler::fit(table.features);
  CHECK(a.model.scaler.mean != full.mean);
}

TEST_CASE("constant targets are learned") {
  auto table = simulated_table(1500, 8);
  std::vector<double> c(table.targets.size(), 2.5);
  auto cfg = small_config();
  cfg.epochs = 60;
  auto res = train(table.features, c, cfg);
  const double tolerance = 0.05 * 2.5;
  CHECK(std::sqrt(res.history.validation_loss[res.history.best_epoch - 1]) < tolerance);
  // Fresh customers; a few extreme feature rows extrapolate further.
  auto fresh = simulated_table(1000, 13);
  auto preds = predict(res.model, fresh.features);
  const auto within = std::count_if(preds.begin(), preds.end(), [&](double p) { return std::abs(p - 2.5) < tolerance; });
  CHECK(within >= 0.99 * preds.size());
}

TEST_CASE("metrics are stable across shuffle seeds") {
  auto table = simulated_table(6000, 9);
  auto test_table = simulated_table(3000, 10);
  std::vector<double> losses;
  for (std::uint64_t seed : {1, 2, 3, 4}) {
    auto cfg = small_config();
    cfg.seed = seed;
    auto res = train(table.features, table.targets, cfg);
    losses.push_back(mse(predict(res.model, test_table.features), test_table.targets));
  }
  const auto [lo, hi] = std::minmax_element(losses.begin(), losses.end());
  const double mean = std::accumulate(losses.begin(), losses.end(), 0.0) / losses.size();
  CHECK((*hi - *lo) / mean < 0.2);
}

TEST_CASE("divergence raises a training error") {
  auto table = simulated_table(500, 11);
  auto cfg = small_config();
  cfg.learning_rate = 1e30;
  cfg.epochs = 5;
  std::vector<double> big(table.targets.size());
  for (std::size_t i = 0; i < big.size(); ++i) big[i] = 1e200 * (1 + table.targets[i]);
  CHECK_THROWS_AS(train(table.features, big, cfg), TrainingError);
}

TEST_CASE("too few rows and bad configs") {
  Eigen::MatrixXd x = Eigen::MatrixXd::Ones(5, 7);
  std::vector<double> y(5, 1.0);
  CHECK_THROWS_AS(train(x, y, TrainConfig{}), DataError);
  TrainConfig bad;
  bad.validation_fraction = 0.7;
  CHECK_THROWS_AS(bad.validate(), DomainError);
}

TEST_CASE("model document round trips") {
  auto table = simulated_table(800, 12);
  auto cfg = small_config();
  cfg.epochs = 3;
  auto res = train(table.features, table.targets, cfg);
  auto doc = model_to_json(res.model);
  CHECK(doc.at("format") == "mlp-v1");
  auto back = model_from_json(nlohmann::json::parse(doc.dump()));
  CHECK(predict(back, table.features) == predict(res.model, table.features));
  CHECK(back.config.hidden == cfg.hidden);
  auto broken = doc;
  broken["format"] = "mlp-v0";
  CHECK_THROWS(model_from_json(broken));
}
