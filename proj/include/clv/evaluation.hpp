#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "clv/data_pipeline.hpp"
#include "clv/neural_net.hpp"
#include "clv/optimize.hpp"
#include "clv/pareto_nbd.hpp"
#include "clv/regularity.hpp"
#include "clv/spend_model.hpp"

namespace clv {

enum class TargetKind { kCount, kRevenue };
std::string to_string(TargetKind kind);
TargetKind parse_target_kind(const std::string& text);

struct EvalWindow {
  std::string calibration_end;  // ISO date, empty when unknown
  int holdout_days = 0;

  friend bool operator==(const EvalWindow&, const EvalWindow&) = default;
};

struct EvalReport {
  std::string model_name;
  double aggregate_accuracy = 0.0;
  double mae = 0.0;
  double rmse = 0.0;
  double rank_correlation = 0.0;  // Spearman, average ranks; 0 when undefined
  double top_decile_lift = 1.0;
  std::size_t n_customers = 0;
  TargetKind target_kind = TargetKind::kCount;
  EvalWindow window;
  double total_predicted = 0.0;
  double total_actual = 0.0;

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

using KeyedValues = std::vector<std::pair<std::string, double>>;

/// Aligns by customer id. Throws DataError if the id sets differ, listing up
/// to five ids present on one side only.
EvalReport compute_metrics(const KeyedValues& predictions, const KeyedValues& actuals, TargetKind kind,
                           std::string model_name = {}, EvalWindow window = {});
/// Already aligned vectors.
EvalReport compute_metrics(std::span<const double> predictions, std::span<const double> actuals, TargetKind kind,
                           std::string model_name = {}, EvalWindow window = {});

double spearman(std::span<const double> a, std::span<const double> b);
/// 1-based ranks with ties sharing the average rank.
std::vector<double> average_ranks(std::span<const double> values);

nlohmann::json to_json(const EvalReport& report);

/// Two-column table: model name and aggregate accuracy as a percentage.
std::string render_accuracy_table(std::span<const EvalReport> reports);
/// All metrics, one row per model.
std::string render_metric_table(std::span<const EvalReport> reports);

struct CompareOptions {
  SplitConfig split;
  FitOptions fit;
  TrainConfig nn;
  TargetKind target = TargetKind::kCount;
  int forecast_draws = 2000;
  bool include_pggg = true;
  bool include_nn = true;
  /// True-parameter predictor reported alongside the fitted models.
  std::optional<RegularityParams> reference;
  std::optional<GgParams> reference_spend;
  std::uint64_t seed = 42;
};

struct ModelTiming {
  std::string model;
  double fit_seconds = 0.0;
  double predict_seconds = 0.0;
};

struct Comparison {
  std::vector<std::string> customer_ids;
  std::vector<double> actuals;
  std::vector<std::pair<std::string, std::vector<double>>> predictions;  // model → per-customer
  std::vector<EvalReport> reports;
  std::vector<ModelTiming> timings;
  nlohmann::json document;  // deterministic part: window, parameters, reports
  std::optional<FitResult<PnbdParams>> pnbd_fit;
  std::optional<GgFitResult> gg_fit;
  std::optional<PgggFitResult> pggg_fit;
  std::optional<TrainHistory> nn_history;
  std::optional<MlpModel> nn_model;
};

/// Fits every model on calibration-window rows only, predicts the holdout
/// window for every calibration customer, and evaluates all of them over the
/// same customer set.
///
/// The network is trained on features as of calibration_end − holdout_days
/// with targets in the following holdout_days, then scores features as of
/// calibration_end.
Comparison compare(const Dataset& dataset, const CompareOptions& options);

/// comparison.json, comparison.txt, predictions.csv and timings.json.
void write_comparison(const Comparison& comparison, const std::filesystem::path& out_dir);

/// Static notes on the practical trade-offs between the two model families.
std::string qualitative_notes();

}  // namespace clv
