#include "scentree/io.hpp"

#include "scentree/errors.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <queue>
#include <regex>
#include <sstream>

namespace scentree {

namespace {

Json matrix_to_json(const Eigen::MatrixXd& m) {
    Json rows = Json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        Json row = Json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

Eigen::MatrixXd matrix_from_json(const Json& j, const std::string& what) {
    if (!j.is_array() || j.empty()) throw ShapeMismatch(what + ": expected a non-empty array of rows");
    const auto rows = static_cast<Eigen::Index>(j.size());
    const auto cols = static_cast<Eigen::Index>(j[0].size());
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        if (!j[i].is_array() || static_cast<Eigen::Index>(j[i].size()) != cols) {
            throw ShapeMismatch(what + ": ragged rows");
        }
        for (Eigen::Index k = 0; k < cols; ++k) m(i, k) = j[i][k].get<double>();
    }
    return m;
}

Json vector_to_json(const Eigen::VectorXd& v) {
    Json a = Json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
}

Eigen::VectorXd vector_from_json(const Json& j, const std::string& what) {
    if (!j.is_array()) throw ShapeMismatch(what + ": expected an array");
    Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
    return v;
}

template <class T>
T require(const Json& j, const char* key) {
    if (!j.contains(key)) throw ShapeMismatch(std::string("missing field \"") + key + "\"");
    return j.at(key).get<T>();
}

ModelKind kind_from_string(const std::string& s) {
    if (s == "gaussian") return ModelKind::gaussian;
    if (s == "lognormal") return ModelKind::lognormal;
    throw InvalidParameter("unknown model kind \"" + s + "\"");
}

const char* method_name(InventoryMethod m) {
    return m == InventoryMethod::dynamic_programming ? "dynamic_programming" : "linear_program";
}

}  // namespace

Json tree_to_json(const ScenarioTree& tree) {
    const auto& topo = tree.topology();
    Json nodes = Json::array();
    for (NodeId n = 0; n < tree.node_count(); ++n) {
        Json node;
        node["id"] = n;
        node["stage"] = topo.stage(n);
        node["parent"] = topo.parent(n);
        node["value"] = vector_to_json(tree.value(n));
        node["cond_prob"] = tree.cond_prob(n);
        nodes.push_back(std::move(node));
    }
    return Json{{"T", tree.stage_count()}, {"D", tree.dim()}, {"nodes", std::move(nodes)}};
}

ScenarioTree tree_from_json(const Json& j) {
    const int T = require<int>(j, "T");
    const int D = require<int>(j, "D");
    if (D < 1 || T < 0) throw ShapeMismatch("tree: need D >= 1 and T >= 0");
    const Json& nodes = j.at("nodes");
    if (!nodes.is_array() || nodes.empty()) throw ShapeMismatch("tree: no nodes");

    std::map<long, std::size_t> index_of;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        const long id = nodes[i].value("id", static_cast<long>(i));
        if (!index_of.emplace(id, i).second) throw ShapeMismatch("tree: duplicate node id " + std::to_string(id));
    }
    std::vector<std::vector<std::size_t>> kids(nodes.size());
    std::size_t root = nodes.size();
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        const Json& p = nodes[i].contains("parent") ? nodes[i]["parent"] : Json();
        if (p.is_null() || p.get<long>() < 0) {
            if (root != nodes.size()) throw ShapeMismatch("tree: more than one root");
            root = i;
            continue;
        }
        auto it = index_of.find(p.get<long>());
        if (it == index_of.end()) throw ShapeMismatch("tree: unknown parent " + std::to_string(p.get<long>()));
        kids[it->second].push_back(i);
    }
    if (root == nodes.size()) throw ShapeMismatch("tree: no root");

    // Breadth-first re-indexing gives the canonical order.
    std::vector<std::size_t> order;
    std::vector<int> parents;
    std::vector<int> depth;
    std::queue<std::pair<std::size_t, int>> queue;
    queue.push({root, -1});
    while (!queue.empty()) {
        auto [i, parent] = queue.front();
        queue.pop();
        const int id = static_cast<int>(order.size());
        order.push_back(i);
        parents.push_back(parent);
        depth.push_back(parent < 0 ? 0 : depth[parent] + 1);
        for (std::size_t c : kids[i]) queue.push({c, id});
    }
    if (order.size() != nodes.size()) throw ShapeMismatch("tree: nodes unreachable from the root");

    const int n = static_cast<int>(order.size());
    Eigen::MatrixXd values = Eigen::MatrixXd::Zero(D, n);
    std::vector<double> probs(n, 1.0);
    for (int k = 0; k < n; ++k) {
        const Json& node = nodes[order[k]];
        if (node.contains("stage") && node["stage"].get<int>() != depth[k]) {
            throw ShapeMismatch("tree: node " + std::to_string(k) + " has stage " +
                                std::to_string(node["stage"].get<int>()) + " but depth " + std::to_string(depth[k]));
        }
        if (node.contains("value") && !node["value"].is_null()) {
            const Json& v = node["value"];
            if (v.is_number() && D == 1) {
                values(0, k) = v.get<double>();
            } else {
                if (!v.is_array() || static_cast<int>(v.size()) != D) {
                    throw ShapeMismatch("tree: node " + std::to_string(k) + " value is not a " + std::to_string(D) +
                                        "-vector");
                }
                for (int d = 0; d < D; ++d) values(d, k) = v[d].get<double>();
            }
        } else if (k != 0) {
            throw ShapeMismatch("tree: node " + std::to_string(k) + " has no value");
        }
        if (k != 0) probs[k] = require<double>(node, "cond_prob");
    }
    auto topo = TreeTopology::from_parents(parents);
    if (topo.stage_count() != T) {
        throw ShapeMismatch("tree: declared T = " + std::to_string(T) + " but depth is " +
                            std::to_string(topo.stage_count()));
    }
    return {std::move(topo), std::move(values), std::move(probs)};
}

Json model_to_json(const ProcessModel& model) {
    return Json{{"kind", model.lognormal() ? "lognormal" : "gaussian"},
                {"D", model.dim()},
                {"T", model.stages()},
                {"mean", vector_to_json(model.core.mean())},
                {"cov", matrix_to_json(model.core.cov())}};
}

ProcessModel model_from_json(const Json& j) {
    const ModelKind kind = kind_from_string(j.value("kind", std::string("gaussian")));
    const int D = require<int>(j, "D");
    const int T = require<int>(j, "T");
    if (j.contains("generator")) {
        const auto gen = j["generator"].get<std::string>();
        if (gen != "random") throw InvalidParameter("unknown model generator \"" + gen + "\"");
        Rng rng = make_rng(require<std::uint64_t>(j, "seed"));
        RandomModelInfo info;
        auto core = random_uniform_model(D, T, require<double>(j, "lambda"), rng, &info);
        if (info.clipped) warn("random model covariance clipped to PSD");
        return {kind, std::move(core)};
    }
    Eigen::VectorXd mean = vector_from_json(j.at("mean"), "mean");
    Eigen::MatrixXd cov = matrix_from_json(j.at("cov"), "cov");
    if (D > 1 && cov.rows() == T && cov.cols() == T) {
        return {kind, GaussianProcessModel::shared_time(D, std::move(mean), cov)};
    }
    return {kind, GaussianProcessModel(D, T, std::move(mean), std::move(cov))};
}

Json inventory_spec_to_json(const InventorySpec& spec) {
    Json j{{"h", spec.h}, {"l", spec.l}, {"s", spec.s}, {"demand", model_to_json(spec.demand)}};
    j["capacity"] = spec.capacity ? Json(*spec.capacity) : Json();
    return j;
}

InventorySpec inventory_spec_from_json(const Json& j) {
    auto spec = [&]() -> InventorySpec {
        if (!j.contains("generator")) {
            return {require<std::vector<double>>(j, "h"), require<std::vector<double>>(j, "l"), {}, std::nullopt,
                    model_from_json(j.at("demand"))};
        }
        const auto gen = j["generator"].get<std::string>();
        if (gen != "random") throw InvalidParameter("unknown inventory generator \"" + gen + "\"");
        Rng rng = make_rng(require<std::uint64_t>(j, "seed"));
        return random_inventory_spec(require<int>(j, "T"), rng);
    }();
    if (j.contains("s")) spec.s = j["s"].get<std::vector<double>>();
    if (j.contains("capacity") && !j["capacity"].is_null()) spec.capacity = j["capacity"].get<double>();
    spec.validate();
    return spec;
}

Json inventory_solution_to_json(const InventorySolution& solution) {
    Json j{{"value", solution.value},
           {"method", method_name(solution.method)},
           {"duality_gap", solution.duality_gap},
           {"order", matrix_to_json(solution.order)},
           {"inventory", matrix_to_json(solution.inventory)},
           {"shortage", matrix_to_json(solution.shortage)}};
    j["profit"] = solution.profit ? Json(*solution.profit) : Json();
    return j;
}

std::string inventory_solution_to_csv(const InventorySolution& solution, const ScenarioTree& tree) {
    std::ostringstream out;
    out << "node,stage,product,order,inventory,shortage\n";
    for (NodeId n = 0; n < tree.node_count(); ++n) {
        for (Eigen::Index d = 0; d < solution.order.rows(); ++d) {
            out << n << ',' << tree.topology().stage(n) << ',' << d << ',' << format_double(solution.order(d, n))
                << ',' << format_double(solution.inventory(d, n)) << ',' << format_double(solution.shortage(d, n))
                << '\n';
        }
    }
    return out.str();
}

Json bound_report_to_json(const BoundReport& report) {
    Json j;
    j["lower_chain"] = report.lower_chain;
    j["upper"] = report.upper;
    j["stage_terms"] = report.stage_terms;
    j["lipschitz"] = report.lipschitz;
    j["sampled_histories"] = report.sampled_histories;
    j["kw_samples"] = report.kw_samples;
    j["kw_estimator"] = report.kw_estimator;
    j["seed"] = report.seed;
    j["estimated"] = report.sampled_histories > 0;
    return j;
}

TreeTopology parse_topology(const std::string& text) {
    static const std::regex balanced(R"(\s*b\s*=\s*(\d+)\s*,\s*T\s*=\s*(\d+)\s*)");
    static const std::regex listed(R"(\s*(?:b\s*=\s*)?(\d+(?:\s*[,x]\s*\d+)*)\s*)");
    std::smatch m;
    std::vector<int> branching;
    if (std::regex_match(text, m, balanced)) {
        branching.assign(std::stoi(m[2]), std::stoi(m[1]));
    } else if (std::regex_match(text, m, listed)) {
        std::string body = m[1];
        for (char& c : body) {
            if (c == 'x' || c == ',') c = ' ';
        }
        std::istringstream in(body);
        for (int b; in >> b;) branching.push_back(b);
    } else {
        throw InvalidParameter("cannot parse topology \"" + text + "\"");
    }
    if (branching.empty()) throw InvalidParameter("topology needs at least one stage");
    for (int b : branching) {
        if (b < 1) throw InvalidParameter("branching must be positive in \"" + text + "\"");
    }
    return TreeTopology::balanced(branching);
}

Json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InvalidParameter("cannot open " + path.string());
    try {
        return Json::parse(in);
    } catch (const Json::parse_error& e) {
        throw ShapeMismatch(path.string() + ": " + e.what());
    }
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw InvalidParameter("cannot write " + path.string());
    out << text;
}

void write_json_file(const std::filesystem::path& path, const Json& j) { write_text_file(path, j.dump(2) + "\n"); }

std::string format_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.16e", x);
    return buf;
}

}  // namespace scentree
