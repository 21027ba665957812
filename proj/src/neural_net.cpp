#include "clv/neural_net.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace clv {

namespace {

constexpr const char* kFormatTag = "mlp-v1";

void activate(Eigen::MatrixXd& z, Activation a) {
  if (a == Activation::kRelu) z = z.cwiseMax(0.0);
}

// ReLU subgradient at 0 is 0.
void mask_gradient(Eigen::MatrixXd& d, const Eigen::MatrixXd& z, Activation a) {
  if (a == Activation::kRelu) d = (z.array() > 0.0).select(d, 0.0);
}

struct Tape {
  std::vector<Eigen::MatrixXd> pre;         // pre-activations, per layer
  std::vector<Eigen::MatrixXd> post;        // post[0] = input, post[l+1] = layer l output
  std::vector<Eigen::MatrixXd> drop_masks;  // empty when dropout inactive
};

Tape run_forward(const std::vector<DenseLayer>& layers, const Eigen::MatrixXd& x, Rng* dropout_rng) {
  Tape tape;
  tape.post.push_back(x);
  tape.drop_masks.resize(layers.size());
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& L = layers[l];
    Eigen::MatrixXd z = tape.post.back() * L.weights.transpose();
    z.rowwise() += L.bias.transpose();
    tape.pre.push_back(z);
    activate(z, L.activation);
    if (dropout_rng && L.dropout > 0.0 && l + 1 < layers.size()) {
      std::bernoulli_distribution keep(1.0 - L.dropout);
      Eigen::MatrixXd mask(z.rows(), z.cols());
      for (Eigen::Index j = 0; j < mask.cols(); ++j)
        for (Eigen::Index i = 0; i < mask.rows(); ++i) mask(i, j) = keep(*dropout_rng) ? 1.0 / (1.0 - L.dropout) : 0.0;
      z.array() *= mask.array();
      tape.drop_masks[l] = std::move(mask);
    }
    tape.post.push_back(std::move(z));
  }
  return tape;
}

Gradients run_backward(const std::vector<DenseLayer>& layers, const Tape& tape, Eigen::MatrixXd d_out) {
  Gradients g;
  g.weights.resize(layers.size());
  g.bias.resize(layers.size());
  Eigen::MatrixXd d = std::move(d_out);
  for (std::size_t l = layers.size(); l-- > 0;) {
    if (tape.drop_masks[l].size() > 0) d.array() *= tape.drop_masks[l].array();
    mask_gradient(d, tape.pre[l], layers[l].activation);
    g.weights[l] = d.transpose() * tape.post[l];
    g.bias[l] = d.colwise().sum().transpose();
    if (l > 0) d = d * layers[l].weights;
  }
  return g;
}

void check_finite(const Eigen::MatrixXd& x, std::span<const double> y) {
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    bool ok = x.row(i).allFinite() && std::isfinite(y[static_cast<std::size_t>(i)]);
    if (!ok) throw DataError("non-finite feature or target in row " + std::to_string(i));
  }
}

double mse(const Eigen::MatrixXd& pred, std::span<const double> y, std::span<const std::size_t> idx) {
  double s = 0.0;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const double e = pred(static_cast<Eigen::Index>(i), 0) - y[idx[i]];
    s += e * e;
  }
  return s / static_cast<double>(idx.size());
}

Eigen::MatrixXd gather(const Eigen::MatrixXd& x, std::span<const std::size_t> idx) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), x.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(idx[i]));
  return out;
}

Eigen::MatrixXd predict_scaled(const std::vector<DenseLayer>& layers, const Eigen::MatrixXd& x) {
  constexpr Eigen::Index kChunk = 4096;
  Eigen::MatrixXd out(x.rows(), 1);
  for (Eigen::Index b = 0; b < x.rows(); b += kChunk) {
    const Eigen::Index n = std::min(kChunk, x.rows() - b);
    Eigen::MatrixXd a = x.middleRows(b, n);
    for (const auto& L : layers) {
      Eigen::MatrixXd z = a * L.weights.transpose();
      z.rowwise() += L.bias.transpose();
      activate(z, L.activation);
      a = std::move(z);
    }
    out.middleRows(b, n) = a;
  }
  return out;
}

}  // namespace

Scaler Scaler::identity(int width) {
  return {std::vector<double>(static_cast<std::size_t>(width), 0.0), std::vector<double>(static_cast<std::size_t>(width), 1.0)};
}

Scaler Scaler::fit(const Eigen::MatrixXd& rows) {
  Scaler s;
  const double n = static_cast<double>(rows.rows());
  for (Eigen::Index j = 0; j < rows.cols(); ++j) {
    const double m = rows.col(j).sum() / n;
    const double var = (rows.col(j).array() - m).square().sum() / n;
    const double sd = std::sqrt(var);
    s.mean.push_back(m);
    s.stddev.push_back(sd > 1e-12 ? sd : 1.0);
  }
  return s;
}

Eigen::MatrixXd Scaler::apply(const Eigen::MatrixXd& rows) const {
  if (static_cast<std::size_t>(rows.cols()) != mean.size())
    throw ShapeError("scaler expects " + std::to_string(mean.size()) + " columns, got " + std::to_string(rows.cols()));
  Eigen::MatrixXd out = rows;
  for (Eigen::Index j = 0; j < out.cols(); ++j)
    out.col(j) = (out.col(j).array() - mean[static_cast<std::size_t>(j)]) / stddev[static_cast<std::size_t>(j)];
  return out;
}

void TrainConfig::validate() const {
  if (epochs <= 0 || batch_size <= 0 || patience <= 0) throw DomainError("epochs, batch_size and patience must be positive");
  if (!(learning_rate > 0.0) || !(epsilon > 0.0)) throw DomainError("learning_rate and epsilon must be positive");
  if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) throw DomainError("moment decays must lie in (0, 1)");
  if (!(validation_fraction > 0.0 && validation_fraction <= 0.5)) throw DomainError("validation_fraction must lie in (0, 0.5]");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw DomainError("dropout must lie in [0, 1)");
  for (int h : hidden)
    if (h <= 0) throw DomainError("hidden widths must be positive");
  if (target != "count" && target != "revenue") throw DomainError("target must be 'count' or 'revenue'");
}

std::vector<int> MlpModel::widths() const {
  std::vector<int> w{input_width};
  for (const auto& L : layers) w.push_back(L.out_width());
  return w;
}

std::size_t MlpModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& L : layers) n += static_cast<std::size_t>(L.weights.size() + L.bias.size());
  return n;
}

MlpModel make_mlp(const std::vector<int>& widths, std::uint64_t seed, double dropout) {
  if (widths.size() < 2) throw ShapeError("a network needs at least an input and an output width");
  MlpModel m;
  m.input_width = widths.front();
  m.seed = seed;
  m.scaler = Scaler::identity(m.input_width);
  Rng rng = substream(seed, 0);
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    if (widths[l] <= 0 || widths[l + 1] <= 0) throw ShapeError("layer widths must be positive");
    DenseLayer L;
    L.weights.resize(widths[l + 1], widths[l]);
    std::normal_distribution<double> he(0.0, std::sqrt(2.0 / widths[l]));
    for (Eigen::Index i = 0; i < L.weights.rows(); ++i)
      for (Eigen::Index j = 0; j < L.weights.cols(); ++j) L.weights(i, j) = he(rng);
    L.bias = Eigen::VectorXd::Zero(widths[l + 1]);
    L.dropout = l + 2 < widths.size() ? dropout : 0.0;
    m.layers.push_back(std::move(L));
  }
  return m;
}

std::vector<Eigen::VectorXd> forward_activations(const MlpModel& model, std::span<const double> features) {
  if (static_cast<int>(features.size()) != model.input_width)
    throw ShapeError("expected " + std::to_string(model.input_width) + " features, got " + std::to_string(features.size()));
  Eigen::VectorXd a(model.input_width);
  for (int j = 0; j < model.input_width; ++j)
    a(j) = (features[static_cast<std::size_t>(j)] - model.scaler.mean[static_cast<std::size_t>(j)]) /
           model.scaler.stddev[static_cast<std::size_t>(j)];
  std::vector<Eigen::VectorXd> out;
  for (const auto& L : model.layers) {
    Eigen::VectorXd z = L.weights * a + L.bias;
    if (L.activation == Activation::kRelu) z = z.cwiseMax(0.0);
    out.push_back(z);
    a = std::move(z);
  }
  return out;
}

double forward(const MlpModel& model, std::span<const double> features) {
  const auto acts = forward_activations(model, features);
  if (acts.back().size() != 1) throw ShapeError("network output is not scalar");
  return acts.back()(0);
}

double forward(const MlpModel& model, const FeatureVector& features) {
  const auto v = features.values();
  return forward(model, std::span<const double>(v));
}

LossGradient loss_and_gradient(const MlpModel& model, const Eigen::MatrixXd& features, std::span<const double> targets) {
  if (features.rows() == 0) throw DataError("empty batch");
  if (static_cast<std::size_t>(features.rows()) != targets.size()) throw ShapeError("features and targets differ in length");
  if (features.cols() != model.input_width)
    throw ShapeError("expected " + std::to_string(model.input_width) + " features, got " + std::to_string(features.cols()));
  check_finite(features, targets);
  const Tape tape = run_forward(model.layers, model.scaler.apply(features), nullptr);
  const auto& out = tape.post.back();
  const double n = static_cast<double>(features.rows());
  Eigen::MatrixXd d(out.rows(), 1);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double e = out(i, 0) - targets[static_cast<std::size_t>(i)];
    loss += e * e;
    d(i, 0) = 2.0 * e / n;
  }
  return {loss / n, run_backward(model.layers, tape, std::move(d))};
}

Eigen::MatrixXd feature_matrix(std::span<const FeatureRow> rows) {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(kFeatureCount));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto v = rows[i].features.values();
    for (std::size_t j = 0; j < kFeatureCount; ++j) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v[j];
  }
  return x;
}

TrainResult train(const Eigen::MatrixXd& features, std::span<const double> targets, const TrainConfig& config) {
  config.validate();
  const auto n = static_cast<std::size_t>(features.rows());
  if (n < 10) throw DataError("training needs at least 10 rows, got " + std::to_string(n));
  if (targets.size() != n) throw ShapeError("features and targets differ in length");
  check_finite(features, targets);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng split_rng = substream(config.seed, 1);
  std::shuffle(order.begin(), order.end(), split_rng);
  const std::size_t n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(config.validation_fraction * n)));
  std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> tr(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::sort(val.begin(), val.end());
  std::sort(tr.begin(), tr.end());

  std::vector<int> widths{static_cast<int>(features.cols())};
  widths.insert(widths.end(), config.hidden.begin(), config.hidden.end());
  widths.push_back(1);
  MlpModel model = make_mlp(widths, config.seed, config.dropout);
  model.config = config;

  const Eigen::MatrixXd x_tr_raw = gather(features, tr);
  model.scaler = Scaler::fit(x_tr_raw);
  const Eigen::MatrixXd x_tr = model.scaler.apply(x_tr_raw);
  const Eigen::MatrixXd x_val = model.scaler.apply(gather(features, val));
  std::vector<double> y_tr(tr.size());
  for (std::size_t i = 0; i < tr.size(); ++i) y_tr[i] = targets[tr[i]];
  double y_mean = 0.0;
  for (double y : y_tr) y_mean += y;
  y_mean /= static_cast<double>(y_tr.size());
  // Output unit starts as the constant target mean. With random output
  // weights the final ReLU tends to die on every row within the first epoch.
  model.layers.back().weights.setZero();
  model.layers.back().bias.setConstant(y_mean);

  Gradients m1, m2;
  for (const auto& L : model.layers) {
    m1.weights.push_back(Eigen::MatrixXd::Zero(L.weights.rows(), L.weights.cols()));
    m1.bias.push_back(Eigen::VectorXd::Zero(L.bias.size()));
  }
  m2 = m1;

  Rng shuffle_rng = substream(config.seed, 2);
  Rng dropout_rng = substream(config.seed, 3);
  std::vector<std::size_t> perm(tr.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::vector<std::size_t> iota_tr = perm;
  std::vector<std::size_t> iota_val(val.size());
  std::iota(iota_val.begin(), iota_val.end(), std::size_t{0});

  TrainResult result;
  std::vector<DenseLayer> best = model.layers;
  double best_val = std::numeric_limits<double>::infinity();
  int since_best = 0;
  long step = 0;
  const bool use_dropout = config.dropout > 0.0;
  const auto bs = static_cast<std::size_t>(config.batch_size);

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(perm.begin(), perm.end(), shuffle_rng);
    double train_sum = 0.0;
    for (std::size_t b = 0; b < perm.size(); b += bs) {
      const std::size_t m = std::min(bs, perm.size() - b);
      const std::span<const std::size_t> idx(perm.data() + b, m);
      const Eigen::MatrixXd xb = gather(x_tr, idx);
      const Tape tape = run_forward(model.layers, xb, use_dropout ? &dropout_rng : nullptr);
      const auto& out = tape.post.back();
      Eigen::MatrixXd d(static_cast<Eigen::Index>(m), 1);
      double loss = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        const double e = out(static_cast<Eigen::Index>(i), 0) - y_tr[idx[i]];
        loss += e * e;
        d(static_cast<Eigen::Index>(i), 0) = 2.0 * e / static_cast<double>(m);
      }
      if (!std::isfinite(loss))
        throw TrainingError("training diverged at epoch " + std::to_string(epoch) +
                            " (non-finite loss); try a lower learning rate");
      train_sum += loss;
      const Gradients g = run_backward(model.layers, tape, std::move(d));

      ++step;
      const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
      const double lr = config.learning_rate;
      for (std::size_t l = 0; l < model.layers.size(); ++l) {
        auto update = [&](auto& param, auto& mom1, auto& mom2, const auto& grad) {
          mom1 = config.beta1 * mom1 + (1.0 - config.beta1) * grad;
          mom2 = config.beta2 * mom2 + (1.0 - config.beta2) * grad.cwiseProduct(grad);
          param.array() -= lr * (mom1.array() / c1) / ((mom2.array() / c2).sqrt() + config.epsilon);
        };
        update(model.layers[l].weights, m1.weights[l], m2.weights[l], g.weights[l]);
        update(model.layers[l].bias, m1.bias[l], m2.bias[l], g.bias[l]);
      }
    }
    const double train_loss = train_sum / static_cast<double>(perm.size());
    const double val_loss = mse(predict_scaled(model.layers, x_val), targets, val);
    if (!std::isfinite(train_loss) || !std::isfinite(val_loss))
      throw TrainingError("training diverged at epoch " + std::to_string(epoch) +
                          " (non-finite loss); try a lower learning rate");
    result.history.train_loss.push_back(train_loss);
    result.history.validation_loss.push_back(val_loss);
    if (val_loss < best_val) {
      best_val = val_loss;
      best = model.layers;
      result.history.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  model.layers = std::move(best);
  result.model = std::move(model);
  return result;
}

std::vector<double> predict(const MlpModel& model, const Eigen::MatrixXd& features) {
  if (features.cols() != model.input_width)
    throw ShapeError("expected " + std::to_string(model.input_width) + " features, got " + std::to_string(features.cols()));
  // Row by row through the same path as forward(), so a row's prediction
  // never depends on which other rows share the call.
  std::vector<double> out(static_cast<std::size_t>(features.rows()));
  parallel_for(out.size(), [&](std::size_t i) {
    const Eigen::VectorXd row = features.row(static_cast<Eigen::Index>(i)).transpose();
    out[i] = forward(model, std::span<const double>(row.data(), static_cast<std::size_t>(row.size())));
  });
  return out;
}

nlohmann::json model_to_json(const MlpModel& model) {
  nlohmann::json doc;
  doc["format"] = kFormatTag;
  doc["input_width"] = model.input_width;
  doc["widths"] = model.widths();
  doc["seed"] = model.seed;
  doc["threads"] = 1;
  doc["layout"] = "row-major weights, shape [out, in]";
  doc["scaler"] = {{"mean", model.scaler.mean}, {"stddev", model.scaler.stddev}};
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& L : model.layers) {
    std::vector<double> w;
    w.reserve(static_cast<std::size_t>(L.weights.size()));
    for (Eigen::Index i = 0; i < L.weights.rows(); ++i)
      for (Eigen::Index j = 0; j < L.weights.cols(); ++j) w.push_back(L.weights(i, j));
    layers.push_back({{"in", L.in_width()},
                      {"out", L.out_width()},
                      {"activation", L.activation == Activation::kRelu ? "relu" : "linear"},
                      {"dropout", L.dropout},
                      {"weights", w},
                      {"bias", std::vector<double>(L.bias.data(), L.bias.data() + L.bias.size())}});
  }
  doc["layers"] = layers;
  const auto& c = model.config;
  doc["train_config"] = {{"epochs", c.epochs},
                         {"batch_size", c.batch_size},
                         {"learning_rate", c.learning_rate},
                         {"beta1", c.beta1},
                         {"beta2", c.beta2},
                         {"epsilon", c.epsilon},
                         {"validation_fraction", c.validation_fraction},
                         {"patience", c.patience},
                         {"seed", c.seed},
                         {"hidden", c.hidden},
                         {"dropout", c.dropout},
                         {"target", c.target}};
  return doc;
}

MlpModel model_from_json(const nlohmann::json& doc) {
  if (!doc.contains("format") || doc["format"] != kFormatTag) throw DataError("not an mlp-v1 model document");
  try {
    MlpModel m;
    m.input_width = doc.at("input_width").get<int>();
    m.seed = doc.at("seed").get<std::uint64_t>();
    m.scaler.mean = doc.at("scaler").at("mean").get<std::vector<double>>();
    m.scaler.stddev = doc.at("scaler").at("stddev").get<std::vector<double>>();
    if (static_cast<int>(m.scaler.mean.size()) != m.input_width || m.scaler.stddev.size() != m.scaler.mean.size())
      throw ShapeError("scaler width does not match input width");
    int prev = m.input_width;
    for (const auto& jl : doc.at("layers")) {
      DenseLayer L;
      const int in = jl.at("in").get<int>();
      const int out = jl.at("out").get<int>();
      if (in != prev) throw ShapeError("layer input width does not chain");
      const auto w = jl.at("weights").get<std::vector<double>>();
      const auto b = jl.at("bias").get<std::vector<double>>();
      if (w.size() != static_cast<std::size_t>(in) * static_cast<std::size_t>(out) || b.size() != static_cast<std::size_t>(out))
        throw ShapeError("layer parameter count does not match its dims");
      L.weights.resize(out, in);
      for (int i = 0; i < out; ++i)
        for (int j = 0; j < in; ++j) L.weights(i, j) = w[static_cast<std::size_t>(i) * static_cast<std::size_t>(in) + j];
      L.bias = Eigen::Map<const Eigen::VectorXd>(b.data(), out);
      L.activation = jl.at("activation").get<std::string>() == "linear" ? Activation::kLinear : Activation::kRelu;
      L.dropout = jl.value("dropout", 0.0);
      m.layers.push_back(std::move(L));
      prev = out;
    }
    if (m.layers.empty() || prev != 1) throw ShapeError("network output is not scalar");
    if (doc.contains("train_config")) {
      const auto& c = doc["train_config"];
      m.config.epochs = c.value("epochs", m.config.epochs);
      m.config.batch_size = c.value("batch_size", m.config.batch_size);
      m.config.learning_rate = c.value("learning_rate", m.config.learning_rate);
      m.config.beta1 = c.value("beta1", m.config.beta1);
      m.config.beta2 = c.value("beta2", m.config.beta2);
      m.config.epsilon = c.value("epsilon", m.config.epsilon);
      m.config.validation_fraction = c.value("validation_fraction", m.config.validation_fraction);
      m.config.patience = c.value("patience", m.config.patience);
      m.config.seed = c.value("seed", m.config.seed);
      m.config.hidden = c.value("hidden", m.config.hidden);
      m.config.dropout = c.value("dropout", m.config.dropout);
      m.config.target = c.value("target", m.config.target);
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed mlp-v1 document: ") + e.what());
  }
}

}  // namespace clv
