#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "clv/data_pipeline.hpp"
#include "clv/pareto_nbd.hpp"
#include "clv/regularity.hpp"
#include "clv/spend_model.hpp"

// File formats shared by the CLI and the simulator.

namespace clv {

nlohmann::json to_json(const FitResult<PnbdParams>& fit);
nlohmann::json to_json(const GgFitResult& fit);
nlohmann::json to_json(const PgggFitResult& fit);
nlohmann::json pnbd_json(const PnbdParams& p);
nlohmann::json gg_json(const GgParams& p);
nlohmann::json pggg_json(const RegularityParams& p);

PnbdParams pnbd_from_json(const nlohmann::json& doc);
GgParams gg_from_json(const nlohmann::json& doc);
RegularityParams pggg_from_json(const nlohmann::json& doc);

nlohmann::json read_json(const std::filesystem::path& path);
/// Pretty-printed with a trailing newline.
void write_json(const std::filesystem::path& path, const nlohmann::json& doc);
void write_text(const std::filesystem::path& path, const std::string& text);

/// `customer_id,x,t_x,T,m_bar` plus the `customer_id,g1;g2;...` sidecar.
void write_summaries(const std::filesystem::path& summaries, const std::filesystem::path& interarrivals,
                     const std::vector<CustomerSummary>& rows);
/// Reads summaries; the sidecar is optional (empty path or missing file
/// leaves interarrivals empty).
std::vector<CustomerSummary> read_summaries(const std::filesystem::path& summaries,
                                            const std::filesystem::path& interarrivals = {});
/// Sidecar path conventionally paired with a summaries file.
std::filesystem::path interarrivals_path_for(const std::filesystem::path& summaries);

void write_features(const std::filesystem::path& path, const std::vector<FeatureRow>& rows);
std::vector<FeatureRow> read_features(const std::filesystem::path& path);

/// `customer_id,holdout_count,holdout_revenue`
void write_targets(const std::filesystem::path& path, const std::map<std::string, HoldoutTarget>& targets);

/// Generic two-column reader: returns (customer_id, value of `column`).
std::vector<std::pair<std::string, double>> read_keyed_column(const std::filesystem::path& path,
                                                              const std::string& column);
/// Names of the header columns of a CSV file.
std::vector<std::string> read_header(const std::filesystem::path& path);

}  // namespace clv
