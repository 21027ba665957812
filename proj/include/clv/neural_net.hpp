#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "clv/data_pipeline.hpp"

// Fully connected regression network trained with Adam on MSE.

namespace clv {

enum class Activation { kRelu, kLinear };

struct DenseLayer {
  Eigen::MatrixXd weights;  // out × in
  Eigen::VectorXd bias;     // out
  Activation activation = Activation::kRelu;
  double dropout = 0.0;     // inverted dropout rate, training only

  int in_width() const { return static_cast<int>(weights.cols()); }
  int out_width() const { return static_cast<int>(weights.rows()); }
};

struct Scaler {
  std::vector<double> mean;
  std::vector<double> stddev;

  /// Mean 0, standard deviation 1 for every column.
  static Scaler identity(int width);
  /// Column statistics of `rows`; constant columns get stddev 1.
  static Scaler fit(const Eigen::MatrixXd& rows);
  Eigen::MatrixXd apply(const Eigen::MatrixXd& rows) const;
};

struct TrainConfig {
  int epochs = 100;
  int batch_size = 256;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double validation_fraction = 0.1;
  int patience = 10;
  std::uint64_t seed = 42;
  std::vector<int> hidden{128, 256, 512, 32};
  double dropout = 0.0;
  /// "count" or "revenue"; recorded with the model.
  std::string target = "count";

  void validate() const;
};

struct MlpModel {
  std::vector<DenseLayer> layers;
  Scaler scaler;
  int input_width = static_cast<int>(kFeatureCount);
  std::uint64_t seed = 42;
  TrainConfig config;

  /// input_width, then the output width of every layer.
  std::vector<int> widths() const;
  std::size_t parameter_count() const;
};

/// Layers `widths[0] → … → widths.back()`, ReLU everywhere, He-normal
/// weights and zero biases drawn from `seed`; identity scaler.
MlpModel make_mlp(const std::vector<int>& widths, std::uint64_t seed, double dropout = 0.0);

/// One raw (unscaled) feature row through the network. Throws ShapeError
/// when the width does not match the model.
double forward(const MlpModel& model, std::span<const double> features);
double forward(const MlpModel& model, const FeatureVector& features);
/// Post-activation outputs of every layer for one input.
std::vector<Eigen::VectorXd> forward_activations(const MlpModel& model, std::span<const double> features);

struct Gradients {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> bias;
};

struct LossGradient {
  double loss = 0.0;
  Gradients grad;
};

/// Mean squared error over the batch (raw features, rows are examples) and
/// its gradient with respect to every weight and bias. Dropout is not
/// applied. Throws DataError naming the first row with a non-finite value.
LossGradient loss_and_gradient(const MlpModel& model, const Eigen::MatrixXd& features, std::span<const double> targets);

struct TrainHistory {
  std::vector<double> train_loss;
  std::vector<double> validation_loss;
  int best_epoch = 0;  // 1-based epoch whose weights were kept
};

struct TrainResult {
  MlpModel model;
  TrainHistory history;
};

/// Deterministic in (data, config.seed). Throws DataError with fewer than 10
/// rows and TrainingError if the loss becomes non-finite.
TrainResult train(const Eigen::MatrixXd& features, std::span<const double> targets, const TrainConfig& config);

/// Row-wise forward pass; output order follows input order.
std::vector<double> predict(const MlpModel& model, const Eigen::MatrixXd& features);

Eigen::MatrixXd feature_matrix(std::span<const FeatureRow> rows);

/// `mlp-v1` document: dims, row-major weights, scaler, config, thread count.
nlohmann::json model_to_json(const MlpModel& model);
MlpModel model_from_json(const nlohmann::json& doc);

}  // namespace clv
