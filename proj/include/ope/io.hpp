#pragma once

#include <optional>
#include <string>

#include "json.hpp"

#include "ope/analysis.hpp"
#include "ope/environments.hpp"
#include "ope/estimators.hpp"
#include "ope/policies.hpp"
#include "ope/trajectory.hpp"

namespace ope {

/// Sidecar path used for a dataset CSV: "x.csv" -> "x.meta.json".
std::string metadata_path(const std::string& csv_path);

/// One row per step: traj_id, t, state columns, action, reward. The sidecar
/// records kind, dimensions, horizon, seeds and the optional `spec`.
void write_dataset(const Dataset& data, const std::string& csv_path, const nlohmann::json& spec = {});
Dataset read_dataset(const std::string& csv_path);

nlohmann::json to_json(const ParametricHistoryPolicy& policy, const FitReport* report = nullptr);
ParametricHistoryPolicy policy_from_json(const nlohmann::json& doc);

void write_sweep_csv(const SweepReport& report, const std::string& path);

nlohmann::json to_json(const SweepRow& row);
nlohmann::json to_json(const ProjectionReport& report);
nlohmann::json to_json(const HistorySelection& selection);
nlohmann::json to_json(const CoverageReport& report);
nlohmann::json to_json(const MonteCarloEstimate& estimate);
nlohmann::json to_json(const EstimateDiagnostics& diagnostics);

void write_json(const nlohmann::json& doc, const std::string& path);
nlohmann::json read_json(const std::string& path);

/// Shortest decimal text that reads back to the same double.
std::string format_double(double value);

}  // namespace ope
