#include "scentree/errors.hpp"
#include "scentree/experiments.hpp"
#include "scentree/inventory.hpp"
#include "scentree/io.hpp"
#include "scentree/nested_distance.hpp"
#include "scentree/quantize.hpp"
#include "scentree/transport.hpp"
#include "scentree/tree.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <set>

using namespace scentree;

namespace {

void emit(const Json& j, const std::string& out) {
    if (out.empty()) {
        std::cout << j.dump(2) << '\n';
    } else {
        write_json_file(out, j);
    }
}

// A tree file gives its leaf-path distribution; {"atoms": [[...], ...], "weights": [...]}
// gives the listed points.
DiscreteDistribution load_distribution(const std::string& path) {
    const Json j = read_json_file(path);
    if (j.contains("nodes")) {
        const auto tree = tree_from_json(j);
        const auto paths = tree.scenario_matrix();
        return {paths.data().transpose(), leaf_probabilities(tree)};
    }
    const auto& atoms = j.at("atoms");
    const auto dim = static_cast<Eigen::Index>(atoms.at(0).is_array() ? atoms.at(0).size() : 1);
    Eigen::MatrixXd x(dim, static_cast<Eigen::Index>(atoms.size()));
    for (std::size_t i = 0; i < atoms.size(); ++i) {
        for (Eigen::Index d = 0; d < dim; ++d) {
            x(d, static_cast<Eigen::Index>(i)) = atoms[i].is_array() ? atoms[i][d].get<double>() : atoms[i].get<double>();
        }
    }
    DiscreteDistribution dist{x, j.at("weights").get<std::vector<double>>()};
    dist.validate();
    return dist;
}

struct QuantizeOptions {
    std::string method = "fb";
    std::string variant = "two-stage";
    std::string init = "stagewise";
    std::string model;
    std::string topology;
    std::string step_rule = "diminishing";
    std::string out;
    std::string trace;
    std::uint64_t seed = 0;
    int iterations = QuantizeConfig{}.iterations;
    int probability_samples = 0;
    int stagewise_samples = QuantizeConfig{}.stagewise_samples;
    double r = 2.0;
    double floor = 0.0;
    bool lognormal_direct = false;
};

void run_quantize(const QuantizeOptions& o) {
    const ProcessModel model = model_from_json(read_json_file(o.model));
    const TreeTopology topo = parse_topology(o.topology);
    if (topo.stage_count() != model.stages()) {
        throw ShapeMismatch("topology has " + std::to_string(topo.stage_count()) + " stages, model has " +
                            std::to_string(model.stages()));
    }
    QuantizeConfig cfg;
    cfg.iterations = o.iterations;
    cfg.variant = variant_from_string(o.variant);
    cfg.step_rule = step_rule_from_string(o.step_rule);
    cfg.r = o.r;
    cfg.seed = o.seed;
    cfg.probability_floor = o.floor;
    cfg.probability_samples = o.probability_samples;
    cfg.stagewise_samples = o.stagewise_samples;
    cfg.lognormal_direct = o.lognormal_direct;

    if (o.method == "mc") {
        emit(tree_to_json(monte_carlo_tree(model, topo, o.seed)), o.out);
    } else if (o.method == "stagewise") {
        emit(tree_to_json(stagewise_optimal_tree(model, topo, cfg)), o.out);
    } else if (o.method == "fb") {
        const auto initial =
            o.init == "mc" ? monte_carlo_tree(model, topo, o.seed) : stagewise_optimal_tree(model, topo, cfg);
        const auto result = forward_backward(model, initial, cfg);
        if (!o.trace.empty()) write_text_file(o.trace, result.trace.to_csv());
        emit(tree_to_json(result.tree), o.out);
    } else {
        throw InvalidParameter("unknown method \"" + o.method + "\"");
    }
}

struct BoundOptions {
    std::vector<std::string> which;
    std::vector<std::string> trees;
    std::string model;
    std::string out;
    double r = 1.0;
    int histories = BoundConfig{}.sampled_histories;
    int samples = BoundConfig{}.kw_samples;
    std::uint64_t seed = 0;
};

void run_bound(const BoundOptions& o) {
    std::set<std::string> which(o.which.begin(), o.which.end());
    const bool all = which.empty() || which.count("all");
    Json out;
    if (o.model.empty()) {
        if (o.trees.size() != 2) throw InvalidParameter("tree bounds need two trees (or --model and one tree)");
        const auto a = tree_from_json(read_json_file(o.trees[0]));
        const auto b = tree_from_json(read_json_file(o.trees[1]));
        out["r"] = o.r;
        if (all || which.count("chain")) out["lower_chain"] = lower_bound_chain(a, b, o.r);
        if (all || which.count("eq6")) out["upper"]["eq6"] = upper_bound_stagewise(a, b, o.r);
        if (all || which.count("eq10") || which.count("eq11")) {
            out["upper"][a.stage_count() % 2 == 0 ? "eq10" : "eq11"] = upper_bound_two_stage(a, b, o.r);
        }
        if (all || which.count("nested")) out["nested_distance"] = nested_distance(a, b, o.r).value;
    } else {
        if (o.trees.size() != 1) throw InvalidParameter("model bounds need exactly one tree");
        const ProcessModel model = model_from_json(read_json_file(o.model));
        const auto tree = tree_from_json(read_json_file(o.trees[0]));
        BoundConfig cfg{o.r, o.histories, o.samples, o.seed};
        BoundReport rep;
        rep.lipschitz = model.lipschitz_constants();
        rep.sampled_histories = cfg.sampled_histories;
        rep.kw_samples = cfg.kw_samples;
        rep.kw_estimator = model.dim() == 1 ? "exact-scalar/empirical-joint" : "empirical";
        rep.seed = cfg.seed;
        std::vector<double> terms;
        if (all || which.count("eq7")) {
            rep.upper["eq7"] = upper_bound_lipschitz(model, tree, cfg, &terms);
            rep.stage_terms["eq7"] = terms;
        }
        if (all || which.count("eq12")) {
            rep.upper["eq12"] = upper_bound_joint_clairvoyant(model, tree, cfg, false, &terms);
            rep.stage_terms["eq12"] = terms;
        }
        if (all || which.count("eq14")) {
            rep.upper["eq14"] = upper_bound_joint_clairvoyant(model, tree, cfg, true, &terms);
            rep.stage_terms["eq14"] = terms;
        }
        out = bound_report_to_json(rep);
    }
    emit(out, o.out);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Scenario tree quantization, nested distances and inventory benchmarks"};
    app.require_subcommand(1);
    bool quiet = false;
    app.add_flag("-q,--quiet", quiet, "Suppress warnings");

    // tree
    auto* tree_cmd = app.add_subcommand("tree", "Inspect and transform scenario trees");
    tree_cmd->require_subcommand(1);
    std::string tree_file;
    std::string tree_out;
    int clair_stage = 1;
    auto* validate = tree_cmd->add_subcommand("validate", "Check a tree file and print its shape");
    validate->add_option("file", tree_file, "Tree JSON")->required()->check(CLI::ExistingFile);
    auto* clair = tree_cmd->add_subcommand("clairvoyant", "Flatten subtrees from a stage into one path per scenario");
    clair->add_option("--stage", clair_stage, "Stage t (1..T)")->required();
    clair->add_option("file", tree_file, "Tree JSON")->required()->check(CLI::ExistingFile);
    clair->add_option("-o,--out", tree_out, "Output file (stdout if omitted)");

    // dist
    auto* dist_cmd = app.add_subcommand("dist", "Transport and nested distances");
    dist_cmd->require_subcommand(1);
    std::vector<std::string> dist_files;
    double dist_r = 1.0;
    auto* kw = dist_cmd->add_subcommand("kw", "Transport distance between two distributions or tree path laws");
    kw->add_option("--r", dist_r, "Order r >= 1");
    kw->add_option("files", dist_files, "Two files")->required()->expected(2)->check(CLI::ExistingFile);
    auto* nested = dist_cmd->add_subcommand("nested", "Nested distance between two trees");
    nested->add_option("--r", dist_r, "Order r >= 1");
    nested->add_option("files", dist_files, "Two tree files")->required()->expected(2)->check(CLI::ExistingFile);

    // bound
    BoundOptions bo;
    auto* bound = app.add_subcommand("bound", "Lower and upper bounds on the nested distance");
    bound->add_option("--which", bo.which, "chain, nested, eq6, eq10, eq11 (two trees) or eq7, eq12, eq14 (model)")
        ->allow_extra_args(false)
        ->delimiter(',')
        ->check(CLI::IsMember({"all", "chain", "nested", "eq6", "eq7", "eq10", "eq11", "eq12", "eq14"}));
    bound->add_option("--model", bo.model, "Process model JSON (model bounds)")->check(CLI::ExistingFile);
    bound->add_option("--r", bo.r, "Order r");
    bound->add_option("--histories", bo.histories, "Sampled histories for the supremum search");
    bound->add_option("--samples", bo.samples, "Empirical sample size for multivariate terms");
    bound->add_option("--seed", bo.seed, "Seed for sampled quantities");
    bound->add_option("-o,--out", bo.out, "Output file (stdout if omitted)");
    bound->add_option("trees", bo.trees, "Tree file(s)")->required()->check(CLI::ExistingFile);

    // quantize
    QuantizeOptions qo;
    auto* quantize = app.add_subcommand("quantize", "Build a scenario tree from a process model");
    quantize->add_option("--method", qo.method, "mc, stagewise or fb")
        ->check(CLI::IsMember({"mc", "stagewise", "fb"}));
    quantize->add_option("--variant", qo.variant, "FB variant: full or two-stage")
        ->check(CLI::IsMember({"full", "two-stage", "two_stage"}));
    quantize->add_option("--init", qo.init, "FB starting tree: stagewise or mc")
        ->check(CLI::IsMember({"stagewise", "mc"}));
    quantize->add_option("--model", qo.model, "Process model JSON")->required()->check(CLI::ExistingFile);
    quantize->add_option("--topology", qo.topology, "e.g. \"b=5,T=3\" or \"3,2,2\"")->required();
    quantize->add_option("--seed", qo.seed, "Seed");
    quantize->add_option("--iterations", qo.iterations, "FB iterations per subtree");
    quantize->add_option("--step-rule", qo.step_rule, "diminishing, square_summable or polyak")
        ->check(CLI::IsMember({"diminishing", "square_summable", "polyak"}));
    quantize->add_option("--r", qo.r, "Order r (1 or 2)");
    quantize->add_option("--probability-floor", qo.floor, "Mass for children without samples");
    quantize->add_option("--probability-samples", qo.probability_samples, "Samples for probability re-estimation");
    quantize->add_option("--stagewise-samples", qo.stagewise_samples, "Sample size for multivariate Lloyd");
    quantize->add_flag("--lognormal-direct", qo.lognormal_direct, "Run FB on the lognormal scale");
    quantize->add_option("--trace", qo.trace, "Write the FB trace CSV here");
    quantize->add_option("-o,--out", qo.out, "Output tree file (stdout if omitted)");

    // inventory
    auto* inv = app.add_subcommand("inventory", "Multi-stage inventory problem");
    inv->require_subcommand(1);
    std::string spec_file;
    std::string inv_tree;
    std::string inv_method = "dp";
    std::string inv_out;
    std::string inv_csv;
    auto* solve = inv->add_subcommand("solve", "Optimal value and decisions on a scenario tree");
    solve->add_option("--spec", spec_file, "Inventory spec JSON")->required()->check(CLI::ExistingFile);
    solve->add_option("--tree", inv_tree, "Tree JSON")->required()->check(CLI::ExistingFile);
    solve->add_option("--method", inv_method, "dp (exact recursion) or lp (dense simplex)")
        ->check(CLI::IsMember({"dp", "lp"}));
    solve->add_option("-o,--out", inv_out, "Result JSON (stdout if omitted)");
    solve->add_option("--csv", inv_csv, "Per-node decisions CSV");
    auto* closed = inv->add_subcommand("closed-form", "Closed-form optimal value of the continuous problem");
    closed->add_option("--spec", spec_file, "Inventory spec JSON")->required()->check(CLI::ExistingFile);

    // experiment
    std::string exp_id;
    std::string exp_config;
    std::string exp_out = "out";
    std::uint64_t exp_seed = 0;
    int exp_jobs = 1;
    int exp_reps = 0;
    auto* exp = app.add_subcommand("experiment", "Run an experiment and write report.csv, report.json, meta.json");
    exp->add_option("id", exp_id, "bound-gap, success-prob, branchiness or inventory")
        ->required()
        ->check(CLI::IsMember({"bound-gap", "success-prob", "branchiness", "inventory"}));
    exp->add_option("--config", exp_config, "Config JSON")->check(CLI::ExistingFile);
    exp->add_option("--out", exp_out, "Output directory");
    auto* seed_opt = exp->add_option("--seed", exp_seed, "Harness seed");
    exp->add_option("--jobs", exp_jobs, "Worker threads (SCENTREE_JOBS overrides)");
    exp->add_option("--replications", exp_reps, "Replications per cell");

    CLI11_PARSE(app, argc, argv);
    set_warnings_enabled(!quiet);

    try {
        if (validate->parsed()) {
            const auto tree = tree_from_json(read_json_file(tree_file));
            const auto probs = leaf_probabilities(tree);
            double total = 0.0;
            for (double p : probs) total += p;
            emit(Json{{"valid", true},
                      {"T", tree.stage_count()},
                      {"D", tree.dim()},
                      {"nodes", tree.node_count()},
                      {"leaves", tree.leaf_count()},
                      {"leaf_probability_sum", total}},
                 "");
        } else if (clair->parsed()) {
            const auto tree = tree_from_json(read_json_file(tree_file));
            emit(tree_to_json(make_clairvoyant(tree, clair_stage)), tree_out);
        } else if (kw->parsed()) {
            const auto p = load_distribution(dist_files[0]);
            const auto q = load_distribution(dist_files[1]);
            emit(Json{{"r", dist_r}, {"distance", kw_distance(p, q, dist_r)}}, "");
        } else if (nested->parsed()) {
            const auto a = tree_from_json(read_json_file(dist_files[0]));
            const auto b = tree_from_json(read_json_file(dist_files[1]));
            emit(Json{{"r", dist_r}, {"nested_distance", nested_distance(a, b, dist_r).value}}, "");
        } else if (bound->parsed()) {
            run_bound(bo);
        } else if (quantize->parsed()) {
            run_quantize(qo);
        } else if (solve->parsed()) {
            const auto spec = inventory_spec_from_json(read_json_file(spec_file));
            const auto tree = tree_from_json(read_json_file(inv_tree));
            const auto method =
                inv_method == "lp" ? InventoryMethod::linear_program : InventoryMethod::dynamic_programming;
            const auto sol = solve_on_tree(spec, tree, method);
            if (!inv_csv.empty()) write_text_file(inv_csv, inventory_solution_to_csv(sol, tree));
            emit(inventory_solution_to_json(sol), inv_out);
        } else if (closed->parsed()) {
            const auto spec = inventory_spec_from_json(read_json_file(spec_file));
            Json out{{"kind", spec.demand.lognormal() ? "lognormal" : "gaussian"}};
            if (spec.demand.lognormal()) {
                out["value_literal_form"] = closed_form_value_lognormal(spec);
                out["value"] = lognormal_value_from_avar(spec);
            } else {
                out["value"] = closed_form_value_gaussian(spec);
            }
            emit(out, "");
        } else if (exp->parsed()) {
            const Json cfg_json = exp_config.empty() ? Json::object() : read_json_file(exp_config);
            ExperimentConfig cfg = experiment_config_from_json(exp_id, cfg_json);
            if (*seed_opt) cfg.seed = exp_seed;
            if (exp_reps > 0) cfg.replications = exp_reps;
            cfg.jobs = exp_jobs;
            const auto report = run_experiment(cfg);
            write_report(report, exp_out);
            std::cout << report.summary.dump(2) << '\n';
        }
    } catch (const Error& e) {
        std::cerr << "scentree: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "scentree: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
