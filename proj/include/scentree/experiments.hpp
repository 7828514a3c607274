#pragma once

#include "scentree/io.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <variant>
#include <vector>

namespace scentree {

/// Experiment ids: "bound-gap", "success-prob", "branchiness", "inventory".
/// `params` overrides the experiment's defaults key by key; see
/// default_experiment_params.
struct ExperimentConfig {
    std::string id;
    std::uint64_t seed = 0;
    int replications = 30;
    int jobs = 1;
    Json params = Json::object();
};

/// Defaults for an experiment id. Throws InvalidParameter for unknown ids.
Json default_experiment_params(const std::string& id);

/// {"seed", "replications", "params": {...}} on top of the defaults.
ExperimentConfig experiment_config_from_json(const std::string& id, const Json& j);

using ReportCell = std::variant<long long, double, std::string>;

struct ExperimentReport {
    std::string id;
    /// Fixed per experiment id.
    std::vector<std::string> columns;
    std::vector<std::vector<ReportCell>> rows;
    Json summary = Json::object();
    /// Seeds, parameters, versions and wall-clock timings. Rows never carry timings,
    /// so reruns reproduce them bit for bit.
    Json meta = Json::object();

    std::string to_csv() const;
    Json to_json() const;
    /// Numeric column by name; string cells are skipped.
    std::vector<double> column(const std::string& name) const;
};

ExperimentReport run_bound_gap_sweep(const ExperimentConfig& config);
ExperimentReport run_success_probability(const ExperimentConfig& config);
ExperimentReport run_branchiness_convergence(const ExperimentConfig& config);
ExperimentReport run_inventory_benchmark(const ExperimentConfig& config);

/// Dispatches on config.id.
ExperimentReport run_experiment(const ExperimentConfig& config);

/// Writes report.csv, report.json and meta.json into `dir`.
void write_report(const ExperimentReport& report, const std::filesystem::path& dir);

/// SCENTREE_JOBS when set to a positive integer, otherwise `requested` (at least 1).
int resolve_jobs(int requested);

/// Runs body(0..count-1) on up to `jobs` threads. Cells must not share state.
/// The first exception thrown by a cell is rethrown after all workers stop.
void parallel_for(int count, int jobs, const std::function<void(int)>& body);

}  // namespace scentree
