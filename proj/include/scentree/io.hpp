#pragma once

#include "scentree/inventory.hpp"
#include "scentree/nested_distance.hpp"
#include "scentree/process_models.hpp"
#include "scentree/quantize.hpp"
#include "scentree/tree.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace scentree {

using Json = nlohmann::json;

/// {"T", "D", "nodes": [{"id", "stage", "parent", "value", "cond_prob"}]}.
/// Ids are node indices in canonical order.
Json tree_to_json(const ScenarioTree& tree);

/// Nodes may come in any order and with arbitrary integer ids; they are
/// re-indexed breadth-first with siblings kept in input order. The root value
/// and root probability are optional. Throws ShapeMismatch on malformed input.
ScenarioTree tree_from_json(const Json& j);

/// {"kind": "gaussian"|"lognormal", "D", "T", "mean": [...], "cov": [[...]]}.
/// `cov` may be DT x DT or, for D > 1, a T x T time covariance shared by the
/// coordinates. Also accepts a generator: {"generator": "random", "D", "T",
/// "lambda", "seed", "kind"} (clipped to PSD when needed).
Json model_to_json(const ProcessModel& model);
ProcessModel model_from_json(const Json& j);

/// {"h", "l", "s", "capacity", "demand": model}. A generator form
/// {"generator": "random", "T", "seed"} draws a one-product instance.
Json inventory_spec_to_json(const InventorySpec& spec);
InventorySpec inventory_spec_from_json(const Json& j);

Json inventory_solution_to_json(const InventorySolution& solution);
/// One row per node and product: node,stage,product,order,inventory,shortage.
std::string inventory_solution_to_csv(const InventorySolution& solution, const ScenarioTree& tree);

Json bound_report_to_json(const BoundReport& report);

/// "b=5,T=3" (balanced), "b=3,2,2" (per-stage branching) or "3x2x2".
TreeTopology parse_topology(const std::string& text);

Json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const Json& j);
void write_text_file(const std::filesystem::path& path, const std::string& text);

/// Scientific notation with 17 significant digits; reads back to the same double.
std::string format_double(double x);

}  // namespace scentree
