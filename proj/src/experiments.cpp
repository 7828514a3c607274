#include "scentree/experiments.hpp"

#include "scentree/errors.hpp"
#include "scentree/inventory.hpp"
#include "scentree/nested_distance.hpp"
#include "scentree/quantize.hpp"
#include "scentree/stats.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <limits>
#include <map>
#include <mutex>
#include <numbers>
#include <sstream>
#include <thread>

namespace scentree {

namespace {

constexpr const char* kVersion = "0.1.0";
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Stream tags keep the draws of different roles apart for one harness seed.
constexpr std::uint64_t kInstanceStream = 0x494e5354;
constexpr std::uint64_t kQuantizerStream = 0x51554e54;
constexpr std::uint64_t kBoundStream = 0x424e4453;

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag, std::uint64_t index) {
    Rng rng = make_rng(seed, tag * 1000003ULL + index);
    return rng();
}

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

QuantizeConfig quantize_config(const Json& j, std::uint64_t seed) {
    QuantizeConfig c;
    c.iterations = j.value("iterations", c.iterations);
    c.step_rule = step_rule_from_string(j.value("step_rule", std::string("diminishing")));
    c.step_exponent = j.value("step_exponent", c.step_exponent);
    c.r = j.value("r", c.r);
    c.variant = variant_from_string(j.value("variant", std::string("two_stage")));
    c.probability_floor = j.value("probability_floor", c.probability_floor);
    c.probability_samples = j.value("probability_samples", c.probability_samples);
    c.stagewise_samples = j.value("stagewise_samples", c.stagewise_samples);
    c.lognormal_direct = j.value("lognormal_direct", c.lognormal_direct);
    c.seed = seed;
    return c;
}

BoundConfig bound_config(const Json& j, std::uint64_t seed) {
    BoundConfig c;
    c.r = j.value("r", c.r);
    c.sampled_histories = j.value("sampled_histories", c.sampled_histories);
    c.kw_samples = j.value("kw_samples", c.kw_samples);
    c.seed = seed;
    return c;
}

int uniform_int(Rng& rng, const Json& range) {
    if (range.is_number()) return range.get<int>();
    return std::uniform_int_distribution<int>(range.at(0).get<int>(), range.at(1).get<int>())(rng);
}

ScenarioTree exp_tree(const ScenarioTree& tree) {
    Eigen::MatrixXd v = tree.values();
    v.rightCols(v.cols() - 1) = v.rightCols(v.cols() - 1).array().exp().matrix();
    return {tree.topology(), std::move(v), tree.cond_probs()};
}

TreeTopology balanced_topology(int stages, int b) {
    std::vector<int> branching(stages, b);
    return TreeTopology::balanced(branching);
}

ScenarioTree build_tree_by_method(const std::string& method, const ProcessModel& model, const TreeTopology& topo,
                                  const QuantizeConfig& cfg) {
    if (method == "monte_carlo") return monte_carlo_tree(model, topo, cfg.seed);
    auto sw = stagewise_optimal_tree(model, topo, cfg);
    if (method == "stagewise") return sw;
    if (method == "fb") return forward_backward(model, sw, cfg).tree;
    throw InvalidParameter("unknown tree method \"" + method + "\"");
}

struct CellOutput {
    std::vector<std::vector<ReportCell>> rows;
    double seconds = 0.0;
    bool clipped = false;
};

// Runs the cells in a pool, then appends their rows in cell order.
void run_cells(ExperimentReport& report, const ExperimentConfig& config, int cells,
               const std::function<CellOutput(int)>& cell) {
    std::vector<CellOutput> out(cells);
    const auto t0 = Clock::now();
    parallel_for(cells, resolve_jobs(config.jobs), [&](int i) {
        const auto c0 = Clock::now();
        try {
            out[i] = cell(i);
        } catch (...) {
            warn(config.id + ": cell " + std::to_string(i) + " failed");
            throw;
        }
        out[i].seconds = seconds_since(c0);
    });
    Json timings = Json::array();
    long clipped = 0;
    for (auto& o : out) {
        for (auto& r : o.rows) report.rows.push_back(std::move(r));
        timings.push_back(o.seconds);
        clipped += o.clipped;
    }
    report.meta["cells"] = cells;
    report.meta["cell_seconds"] = std::move(timings);
    report.meta["clipped_covariances"] = clipped;
    report.meta["seconds"] = seconds_since(t0);
}

Json binomial_json(const BinomialTest& t) {
    return Json{{"successes", t.successes}, {"trials", t.trials},  {"frequency", t.frequency},
                {"ci_lower", t.lower},      {"ci_upper", t.upper}, {"p_value_vs_half", t.p_value}};
}

void stamp_meta(ExperimentReport& report, const ExperimentConfig& config, const Json& params) {
    report.meta["id"] = config.id;
    report.meta["version"] = kVersion;
    report.meta["compiler"] = __VERSION__;
    report.meta["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                           std::to_string(EIGEN_MINOR_VERSION);
    report.meta["seed"] = config.seed;
    report.meta["replications"] = config.replications;
    report.meta["jobs"] = resolve_jobs(config.jobs);
    report.meta["params"] = params;
}

Json effective_params(const ExperimentConfig& config) {
    Json p = default_experiment_params(config.id);
    p.merge_patch(config.params);
    return p;
}

// ---------------------------------------------------------------------------
// FB against stage-wise trees under the Lipschitz-amplified stage-wise bound.

ExperimentReport run_bound_cells(const ExperimentConfig& config) {
    const Json p = effective_params(config);
    ExperimentReport report;
    report.id = config.id;
    report.columns = {"cell",   "seed",  "replicate", "kind",        "lambda", "D",      "T",
                      "b",      "kw_eq7", "fb_eq7",   "gap_eq7",     "fb_below_eq7",   "kw_eq14",
                      "fb_eq14", "fb_below_eq14"};
    stamp_meta(report, config, p);

    const auto lambdas = p.at("lambda").get<std::vector<double>>();
    const auto kinds = p.at("kind").get<std::vector<std::string>>();
    const bool diagonal = p.at("covariance").get<std::string>() == "diagonal";
    const bool joint = p.at("joint_bound").get<bool>();
    const Json instance_seed = p.contains("instance_seed") ? p["instance_seed"] : Json();
    const int reps = config.replications;
    const int cells = static_cast<int>(lambdas.size()) * reps;

    run_cells(report, config, cells, [&](int cell) {
        CellOutput out;
        const int li = cell / reps;
        const int rep = cell % reps;
        const double lambda = lambdas[li];
        // The instance depends on the replicate only, so lambda cells are paired
        // draws of the same shape, scaled.
        Rng rng = instance_seed.is_null() ? make_rng(config.seed, kInstanceStream + static_cast<std::uint64_t>(rep))
                                          : make_rng(instance_seed.get<std::uint64_t>(), kInstanceStream);
        const int D = uniform_int(rng, p.at("D"));
        const int T = uniform_int(rng, p.at("T"));
        const int b = uniform_int(rng, p.at("b"));
        RandomModelInfo info;
        GaussianProcessModel core = random_uniform_model(D, T, lambda, rng, &info);
        if (diagonal) {
            Eigen::MatrixXd c = core.cov().diagonal().asDiagonal();
            core = GaussianProcessModel(D, T, core.mean(), c);
        }
        out.clipped = info.clipped;
        const ProcessModel gaussian{ModelKind::gaussian, core};
        const auto topo = balanced_topology(T, b);
        const auto qcfg = quantize_config(p.at("fb"), derive_seed(config.seed, kQuantizerStream, cell));
        const auto sw = stagewise_optimal_tree(gaussian, topo, qcfg);
        const auto fb = forward_backward(gaussian, sw, qcfg).tree;
        const auto bcfg = bound_config(p.at("bound"), derive_seed(config.seed, kBoundStream, cell));

        for (const auto& kind_name : kinds) {
            const bool lognormal = kind_name == "lognormal";
            if (!lognormal && kind_name != "gaussian") throw InvalidParameter("unknown kind \"" + kind_name + "\"");
            const ProcessModel model{lognormal ? ModelKind::lognormal : ModelKind::gaussian, core};
            const ScenarioTree kw_tree = lognormal ? exp_tree(sw) : sw;
            const ScenarioTree fb_tree = lognormal ? exp_tree(fb) : fb;
            const double kw7 = upper_bound_lipschitz(model, kw_tree, bcfg);
            const double fb7 = upper_bound_lipschitz(model, fb_tree, bcfg);
            double kw14 = kNaN;
            double fb14 = kNaN;
            if (joint) {
                kw14 = upper_bound_joint_clairvoyant(model, kw_tree, bcfg, true);
                fb14 = upper_bound_joint_clairvoyant(model, fb_tree, bcfg, true);
            }
            out.rows.push_back({static_cast<long long>(cell), static_cast<long long>(config.seed),
                                static_cast<long long>(rep), kind_name, lambda, static_cast<long long>(D),
                                static_cast<long long>(T), static_cast<long long>(b), kw7, fb7, kw7 - fb7,
                                static_cast<long long>(fb7 < kw7), kw14, fb14,
                                static_cast<long long>(joint ? fb14 < kw14 : 0)});
        }
        return out;
    });

    // Summary per kind and lambda, slopes of the gap, and the paired trend test.
    Json groups = Json::array();
    for (const auto& kind_name : kinds) {
        std::vector<double> gap_all, lam_all, t_all, d_all;
        std::vector<std::vector<long long>> success_by_lambda(lambdas.size());
        for (std::size_t li = 0; li < lambdas.size(); ++li) {
            std::vector<double> gaps;
            long s7 = 0, s14 = 0, n = 0, non_finite = 0;
            for (const auto& row : report.rows) {
                if (std::get<std::string>(row[3]) != kind_name || std::get<double>(row[4]) != lambdas[li]) continue;
                success_by_lambda[li].push_back(std::get<long long>(row[11]));
                // Overflowing lognormal cells carry infinite bounds; they are counted, not compared.
                const double gap = std::get<double>(row[10]);
                if (!std::isfinite(gap)) {
                    ++non_finite;
                    continue;
                }
                gaps.push_back(gap);
                gap_all.push_back(gap);
                lam_all.push_back(lambdas[li]);
                d_all.push_back(static_cast<double>(std::get<long long>(row[5])));
                t_all.push_back(static_cast<double>(std::get<long long>(row[6])));
                s7 += std::get<long long>(row[11]);
                s14 += std::get<long long>(row[14]);
                ++n;
            }
            const auto g = summarize(gaps);
            Json entry{{"kind", kind_name},
                       {"lambda", lambdas[li]},
                       {"gap_mean", g.mean},
                       {"gap_std_error", g.std_error},
                       {"non_finite", non_finite}};
            if (n > 0) {
                entry["success_eq7"] = binomial_json(binomial_test(s7, n, 0.5));
                if (joint) entry["success_eq14"] = binomial_json(binomial_test(s14, n, 0.5));
            }
            groups.push_back(std::move(entry));
        }
        Json trend;
        if (lambdas.size() > 1) {
            std::vector<double> diff;
            for (std::size_t r = 0; r < success_by_lambda.front().size(); ++r) {
                diff.push_back(static_cast<double>(success_by_lambda.back()[r] - success_by_lambda.front()[r]));
            }
            const auto s = sign_test(diff);
            trend = Json{{"from_lambda", lambdas.front()}, {"to_lambda", lambdas.back()}, {"improved", s.positive},
                         {"worsened", s.negative}, {"p_value", s.p_value}};
        }
        const auto coef = linear_fit({lam_all, t_all, d_all}, gap_all);
        report.summary[kind_name] =
            Json{{"groups", groups}, {"gap_slope", {{"lambda", coef[1]}, {"T", coef[2]}, {"D", coef[3]}}},
                 {"success_trend", trend}};
        groups = Json::array();
    }
    return report;
}

// ---------------------------------------------------------------------------
// Inventory helpers.

Eigen::VectorXd demand_pattern(const std::string& name, int stages, double base) {
    Eigen::VectorXd mu(stages);
    const double span = std::max(stages - 1, 1);
    for (int t = 0; t < stages; ++t) {
        const double rise = t / span;
        if (name == "constant") {
            mu[t] = base;
        } else if (name == "increasing") {
            mu[t] = base * (0.5 + rise);
        } else if (name == "decreasing") {
            mu[t] = base * (1.5 - rise);
        } else if (name == "bell") {
            mu[t] = base * (0.5 + std::sin(std::numbers::pi * (t + 0.5) / stages));
        } else {
            throw InvalidParameter("unknown demand pattern \"" + name + "\"");
        }
    }
    return mu;
}

// Random inventory instance around a given mean: variance equal to the mean,
// covariances 10 U, retention 0.1 U and rapid-order price 1 + U.
InventorySpec patterned_spec(const Eigen::VectorXd& mu, Rng& rng) {
    const int stages = static_cast<int>(mu.size());
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(stages, stages);
    for (int s = 0; s < stages; ++s) {
        cov(s, s) = mu[s];
        for (int t = s + 1; t < stages; ++t) cov(s, t) = cov(t, s) = 10.0 * u(rng);
    }
    if (Eigen::LLT<Eigen::MatrixXd>(cov).info() != Eigen::Success) cov = clip_to_psd(cov, 1e-6);
    InventorySpec spec{{}, {}, {}, std::nullopt, {ModelKind::gaussian, GaussianProcessModel(1, stages, mu, cov)}};
    for (int t = 0; t < stages; ++t) spec.l.push_back(0.1 * (1.0 - u(rng)));
    for (int t = 0; t < stages; ++t) spec.h.push_back(1.0 + (1.0 - u(rng)));
    return spec;
}

// Stable per-section stream index, independent of which sections are enabled.
std::uint64_t stream_tag(const std::string& section, const std::string& pattern) {
    static const std::vector<std::string> sections{"patterns", "stationary", "paired", "retention", "capacity"};
    static const std::vector<std::string> patterns{"constant", "increasing", "decreasing", "bell"};
    const auto s = std::find(sections.begin(), sections.end(), section) - sections.begin();
    const auto q = std::find(patterns.begin(), patterns.end(), pattern) - patterns.begin();
    return static_cast<std::uint64_t>(s * 16 + q);
}

double relative_error(double v, double ref) { return (v - ref) / std::abs(ref); }

}  // namespace

// ---------------------------------------------------------------------------

Json default_experiment_params(const std::string& id) {
    const Json fb{{"iterations", 5000}, {"variant", "two_stage"}, {"step_rule", "diminishing"},
                  {"r", 2.0},           {"stagewise_samples", 5000}};
    const Json bound{{"r", 1.0}, {"sampled_histories", 64}, {"kw_samples", 1024}};
    if (id == "bound-gap" || id == "success-prob") {
        const bool gap = id == "bound-gap";
        return Json{{"kind", gap ? Json::array({"gaussian"}) : Json::array({"gaussian", "lognormal"})},
                    {"lambda", Json::array({10.0, 20.0, 30.0})},
                    {"D", Json::array({1, 10})},
                    {"T", Json::array({2, 4})},
                    {"b", Json::array({2, 5})},
                    {"covariance", "random"},
                    {"instance_seed", nullptr},
                    {"joint_bound", gap},
                    {"fb", fb},
                    {"bound", bound}};
    }
    if (id == "branchiness") {
        const Json model{{"kind", "gaussian"},
                         {"D", 1},
                         {"T", 3},
                         {"mean", {1.0, 2.0, 3.0}},
                         {"cov", {{1.0, 0.3, 0.0}, {0.3, 0.7, 0.3}, {0.0, 0.3, 0.5}}}};
        return Json{{"model", model},
                    {"approx_topology", "b=2,T=3"},
                    {"reference_b", Json::array({2, 3, 4, 5, 6})},
                    {"methods", Json::array({"monte_carlo", "stagewise", "fb"})},
                    {"r", 1.0},
                    {"fb", fb}};
    }
    if (id == "inventory") {
        Json ifb = fb;
        ifb["iterations"] = 10000;
        return Json{{"sections", Json::array({"patterns", "stationary", "paired", "retention", "capacity"})},
                    {"mean", 100.0},
                    {"patterns",
                     {{"names", Json::array({"constant", "increasing", "decreasing", "bell"})},
                      {"T", 3},
                      {"b", Json::array({2, 3, 5, 10})},
                      {"methods", Json::array({"monte_carlo", "stagewise", "fb"})}}},
                    {"stationary", {{"T", 2}, {"b", 30}, {"instances", 1}}},
                    {"paired", {{"T", Json::array({2, 3})}, {"b", Json::array({1, 30})}}},
                    {"retention",
                     {{"T", 2},
                      {"b", 10},
                      {"l", Json::array({0.02, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.98})}}},
                    {"capacity",
                     {{"T", 2}, {"b", 10}, {"values", Json::array({20, 40, 60, 80, 100, 120, 140, 160, 200, 300, 400})}}},
                    {"fb", ifb}};
    }
    throw InvalidParameter("unknown experiment id \"" + id + "\"");
}

ExperimentConfig experiment_config_from_json(const std::string& id, const Json& j) {
    ExperimentConfig c;
    c.id = id;
    default_experiment_params(id);
    c.seed = j.value("seed", c.seed);
    c.replications = j.value("replications", c.replications);
    c.jobs = j.value("jobs", c.jobs);
    if (j.contains("params")) {
        c.params = j["params"];
    } else {
        for (const auto& [key, value] : j.items()) {
            if (key != "seed" && key != "replications" && key != "jobs") c.params[key] = value;
        }
    }
    if (c.replications < 1) throw InvalidParameter("replications must be positive");
    return c;
}

std::string ExperimentReport::to_csv() const {
    std::ostringstream out;
    for (std::size_t c = 0; c < columns.size(); ++c) out << (c ? "," : "") << columns[c];
    out << '\n';
    for (const auto& row : rows) {
        for (std::size_t c = 0; c < row.size(); ++c) {
            if (c) out << ',';
            std::visit(
                [&](const auto& v) {
                    using V = std::decay_t<decltype(v)>;
                    if constexpr (std::is_same_v<V, double>) {
                        out << format_double(v);
                    } else {
                        out << v;
                    }
                },
                row[c]);
        }
        out << '\n';
    }
    return out.str();
}

Json ExperimentReport::to_json() const {
    Json rows_json = Json::array();
    for (const auto& row : rows) {
        Json r = Json::object();
        for (std::size_t c = 0; c < row.size(); ++c) {
            std::visit([&](const auto& v) { r[columns[c]] = v; }, row[c]);
        }
        rows_json.push_back(std::move(r));
    }
    return Json{{"id", id}, {"columns", columns}, {"rows", std::move(rows_json)}, {"summary", summary}};
}

std::vector<double> ExperimentReport::column(const std::string& name) const {
    std::size_t c = 0;
    while (c < columns.size() && columns[c] != name) ++c;
    if (c == columns.size()) throw InvalidParameter("no column \"" + name + "\"");
    std::vector<double> out;
    for (const auto& row : rows) {
        if (const auto* d = std::get_if<double>(&row[c])) {
            out.push_back(*d);
        } else if (const auto* i = std::get_if<long long>(&row[c])) {
            out.push_back(static_cast<double>(*i));
        }
    }
    return out;
}

ExperimentReport run_bound_gap_sweep(const ExperimentConfig& config) {
    ExperimentConfig c = config;
    c.id = "bound-gap";
    return run_bound_cells(c);
}

ExperimentReport run_success_probability(const ExperimentConfig& config) {
    ExperimentConfig c = config;
    c.id = "success-prob";
    return run_bound_cells(c);
}

ExperimentReport run_branchiness_convergence(const ExperimentConfig& config) {
    ExperimentConfig c = config;
    c.id = "branchiness";
    const Json p = effective_params(c);
    ExperimentReport report;
    report.id = c.id;
    report.columns = {"cell", "seed", "replicate", "method", "b", "nested_distance"};
    stamp_meta(report, c, p);

    const ProcessModel model = model_from_json(p.at("model"));
    const TreeTopology approx = parse_topology(p.at("approx_topology").get<std::string>());
    if (approx.stage_count() != model.stages()) throw ShapeMismatch("approx_topology must have the model's T stages");
    const auto bs = p.at("reference_b").get<std::vector<int>>();
    const auto methods = p.at("methods").get<std::vector<std::string>>();
    const double r = p.at("r").get<double>();

    // Reference trees are stage-wise optimal and shared by every cell.
    std::vector<ScenarioTree> refs;
    const auto ref_cfg = quantize_config(p.at("fb"), derive_seed(c.seed, kQuantizerStream, 0xffff));
    for (int b : bs) refs.push_back(stagewise_optimal_tree(model, balanced_topology(model.stages(), b), ref_cfg));

    const int reps = c.replications;
    run_cells(report, c, reps, [&](int cell) {
        CellOutput out;
        const auto qcfg = quantize_config(p.at("fb"), derive_seed(c.seed, kQuantizerStream, cell));
        for (const auto& method : methods) {
            const auto tree = build_tree_by_method(method, model, approx, qcfg);
            for (std::size_t k = 0; k < bs.size(); ++k) {
                const double d = nested_distance(refs[k], tree, r).value;
                out.rows.push_back({static_cast<long long>(cell), static_cast<long long>(c.seed),
                                    static_cast<long long>(cell), method, static_cast<long long>(bs[k]), d});
            }
        }
        return out;
    });

    // Mean series per method, plateau comparison against Monte Carlo.
    std::map<std::string, std::vector<std::vector<double>>> series;  // method -> b index -> values
    for (const auto& m : methods) series[m].assign(bs.size(), {});
    for (const auto& row : report.rows) {
        const auto& m = std::get<std::string>(row[3]);
        const auto b = std::get<long long>(row[4]);
        const auto k = static_cast<std::size_t>(std::find(bs.begin(), bs.end(), b) - bs.begin());
        series[m][k].push_back(std::get<double>(row[5]));
    }
    Json per_method = Json::object();
    for (const auto& m : methods) {
        std::vector<double> means;
        for (const auto& v : series[m]) means.push_back(summarize(v).mean);
        Json entry{{"mean_by_b", means}, {"plateau", means.back()}};
        if (means.size() >= 3) {
            entry["first_step"] = means[1] - means[0];
            entry["last_step"] = means.back() - means[means.size() - 2];
            entry["flattening"] = std::abs(means.back() - means[means.size() - 2]) < std::abs(means[1] - means[0]);
        }
        per_method[m] = std::move(entry);
    }
    report.summary["methods"] = per_method;
    for (const std::string other : {"stagewise", "fb"}) {
        if (!series.count("monte_carlo") || !series.count(other)) continue;
        long wins = 0;
        const auto& mc = series["monte_carlo"].back();
        const auto& o = series[other].back();
        for (std::size_t i = 0; i < mc.size(); ++i) wins += o[i] <= mc[i];
        report.summary[other + "_plateau_le_monte_carlo"] =
            binomial_json(binomial_test(wins, static_cast<long>(mc.size()), 0.5));
    }
    report.summary["reference_b"] = bs;
    return report;
}

ExperimentReport run_inventory_benchmark(const ExperimentConfig& config) {
    ExperimentConfig c = config;
    c.id = "inventory";
    const Json p = effective_params(c);
    ExperimentReport report;
    report.id = c.id;
    report.columns = {"cell", "seed", "section", "replicate", "pattern", "T",           "b",
                      "method", "param", "value", "closed_form", "rel_error"};
    stamp_meta(report, c, p);

    const auto sections = p.at("sections").get<std::vector<std::string>>();
    const auto has = [&](const char* s) { return std::find(sections.begin(), sections.end(), s) != sections.end(); };
    const double base = p.at("mean").get<double>();
    const int reps = c.replications;

    // Each cell is one job; the cell list is fixed before any runs.
    struct Job {
        std::string section;
        int replicate = 0;
        std::string pattern;
    };
    std::vector<Job> jobs;
    if (has("patterns")) {
        for (const auto& name : p.at("patterns").at("names").get<std::vector<std::string>>()) {
            for (int r = 0; r < reps; ++r) jobs.push_back({"patterns", r, name});
        }
    }
    if (has("stationary")) {
        for (int r = 0; r < p.at("stationary").at("instances").get<int>(); ++r) jobs.push_back({"stationary", r, "constant"});
    }
    if (has("paired")) {
        for (int r = 0; r < reps; ++r) jobs.push_back({"paired", r, "constant"});
    }
    if (has("retention")) jobs.push_back({"retention", 0, "constant"});
    if (has("capacity")) jobs.push_back({"capacity", 0, "constant"});

    run_cells(report, c, static_cast<int>(jobs.size()), [&](int cell) {
        CellOutput out;
        const Job& job = jobs[cell];
        const Json& sp = p.at(job.section);
        const std::uint64_t section_tag = stream_tag(job.section, job.pattern);
        Rng rng = make_rng(c.seed, kInstanceStream + (section_tag << 16) + static_cast<std::uint64_t>(job.replicate));
        const auto qcfg = quantize_config(p.at("fb"), derive_seed(c.seed, kQuantizerStream, cell));
        auto emit = [&](int T, int b, const std::string& method, double param, double value, double closed) {
            out.rows.push_back({static_cast<long long>(cell), static_cast<long long>(c.seed), job.section,
                                static_cast<long long>(job.replicate), job.pattern, static_cast<long long>(T),
                                static_cast<long long>(b), method, param, value, closed,
                                relative_error(value, closed)});
        };

        if (job.section == "patterns") {
            const int T = sp.at("T").get<int>();
            const auto spec = patterned_spec(demand_pattern(job.pattern, T, base), rng);
            const double closed = closed_form_value_gaussian(spec);
            for (int b : sp.at("b").get<std::vector<int>>()) {
                const auto topo = balanced_topology(T, b);
                for (const auto& method : sp.at("methods").get<std::vector<std::string>>()) {
                    const auto tree = build_tree_by_method(method, spec.demand, topo, qcfg);
                    emit(T, b, method, kNaN, solve_on_tree(spec, tree).value, closed);
                }
            }
        } else if (job.section == "stationary") {
            const int T = sp.at("T").get<int>();
            const int b = sp.at("b").get<int>();
            const auto spec = random_inventory_spec(T, rng);
            const double closed = closed_form_value_gaussian(spec);
            const auto topo = balanced_topology(T, b);
            for (const std::string method : {"stagewise", "fb"}) {
                emit(T, b, method, kNaN, solve_on_tree(spec, build_tree_by_method(method, spec.demand, topo, qcfg)).value,
                     closed);
            }
        } else if (job.section == "paired") {
            const int T = uniform_int(rng, sp.at("T"));
            const int b = uniform_int(rng, sp.at("b"));
            const auto spec = random_inventory_spec(T, rng);
            const double closed = closed_form_value_gaussian(spec);
            const auto topo = balanced_topology(T, b);
            const auto sw = stagewise_optimal_tree(spec.demand, topo, qcfg);
            const auto fb = forward_backward(spec.demand, sw, qcfg).tree;
            emit(T, b, "stagewise", kNaN, solve_on_tree(spec, sw).value, closed);
            emit(T, b, "fb", kNaN, solve_on_tree(spec, fb).value, closed);
        } else if (job.section == "retention") {
            const int T = sp.at("T").get<int>();
            const int b = sp.at("b").get<int>();
            auto spec = random_inventory_spec(T, rng);
            const auto tree = build_tree_by_method("fb", spec.demand, balanced_topology(T, b), qcfg);
            for (double l : sp.at("l").get<std::vector<double>>()) {
                spec.l.assign(T, l);
                spec.h.assign(T, 1.0 + l);
                emit(T, b, "fb", l, solve_on_tree(spec, tree).value, closed_form_value_gaussian(spec));
            }
        } else if (job.section == "capacity") {
            const int T = sp.at("T").get<int>();
            const int b = sp.at("b").get<int>();
            auto spec = random_inventory_spec(T, rng);
            const double closed = closed_form_value_gaussian(spec);
            const auto tree = build_tree_by_method("fb", spec.demand, balanced_topology(T, b), qcfg);
            for (double cap : sp.at("values").get<std::vector<double>>()) {
                spec.capacity = cap;
                emit(T, b, "fb", cap, solve_on_tree(spec, tree).value, closed);
            }
        }
        return out;
    });

    auto rows_of = [&](const std::string& section) {
        std::vector<const std::vector<ReportCell>*> out;
        for (const auto& row : report.rows) {
            if (std::get<std::string>(row[2]) == section) out.push_back(&row);
        }
        return out;
    };
    auto dbl = [](const std::vector<ReportCell>* row, int k) { return std::get<double>((*row)[k]); };
    auto str = [](const std::vector<ReportCell>* row, int k) { return std::get<std::string>((*row)[k]); };

    if (has("patterns")) {
        // Spread of relative errors across sampled instances per pattern, method and b.
        std::map<std::string, std::map<std::string, std::map<long long, std::vector<double>>>> err;
        for (const auto* row : rows_of("patterns")) {
            err[str(row, 4)][str(row, 7)][std::get<long long>((*row)[6])].push_back(dbl(row, 11));
        }
        Json js = Json::object();
        for (const auto& [pattern, by_method] : err) {
            for (const auto& [method, by_b] : by_method) {
                for (const auto& [b, v] : by_b) {
                    const auto s = summarize(v);
                    js[pattern][method][std::to_string(b)] =
                        Json{{"mean_rel_error", s.mean}, {"range", s.max - s.min}, {"std_dev", s.std_dev}};
                }
            }
        }
        report.summary["patterns"] = js;
    }
    if (has("stationary")) {
        Json js = Json::array();
        for (const auto* row : rows_of("stationary")) {
            js.push_back(Json{{"method", str(row, 7)}, {"value", dbl(row, 9)}, {"closed_form", dbl(row, 10)},
                              {"abs_rel_error", std::abs(dbl(row, 11))}});
        }
        report.summary["stationary"] = js;
    }
    if (has("paired")) {
        const auto rows = rows_of("paired");
        long wins = 0, n = 0;
        for (std::size_t i = 0; i + 1 < rows.size(); i += 2) {
            wins += std::abs(dbl(rows[i + 1], 11)) <= std::abs(dbl(rows[i], 11));
            ++n;
        }
        if (n > 0) report.summary["paired"] = binomial_json(binomial_test(wins, n, 0.5));
    }
    if (has("retention")) {
        const auto rows = rows_of("retention");
        Json curve = Json::array();
        std::vector<double> tree_v, closed_v;
        for (const auto* row : rows) {
            const double l = dbl(row, 8);
            curve.push_back(Json{{"l", l}, {"l_over_1_plus_l", l / (1 + l)}, {"value", dbl(row, 9)},
                                 {"closed_form", dbl(row, 10)}});
            tree_v.push_back(dbl(row, 9));
            closed_v.push_back(dbl(row, 10));
        }
        auto interior = [](const std::vector<double>& v) {
            if (v.size() < 3) return false;
            const auto k = std::min_element(v.begin(), v.end()) - v.begin();
            return k > 0 && k + 1 < static_cast<long>(v.size());
        };
        report.summary["retention"] =
            Json{{"curve", curve}, {"interior_minimum", interior(tree_v)}, {"closed_form_interior_minimum", interior(closed_v)}};
    }
    if (has("capacity")) {
        const auto rows = rows_of("capacity");
        bool monotone = true;
        for (std::size_t i = 1; i < rows.size(); ++i) monotone = monotone && dbl(rows[i], 9) >= dbl(rows[i - 1], 9) - 1e-9;
        double last_step = kNaN;
        if (rows.size() >= 2) {
            const double a = dbl(rows[rows.size() - 2], 9);
            const double z = dbl(rows.back(), 9);
            last_step = std::abs(z - a) / std::abs(z);
        }
        report.summary["capacity"] = Json{{"non_decreasing", monotone}, {"last_relative_step", last_step}};
    }
    return report;
}

ExperimentReport run_experiment(const ExperimentConfig& config) {
    if (config.id == "bound-gap") return run_bound_gap_sweep(config);
    if (config.id == "success-prob") return run_success_probability(config);
    if (config.id == "branchiness") return run_branchiness_convergence(config);
    if (config.id == "inventory") return run_inventory_benchmark(config);
    throw InvalidParameter("unknown experiment id \"" + config.id + "\"");
}

void write_report(const ExperimentReport& report, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    write_text_file(dir / "report.csv", report.to_csv());
    write_json_file(dir / "report.json", report.to_json());
    write_json_file(dir / "meta.json", report.meta);
}

int resolve_jobs(int requested) {
    if (const char* env = std::getenv("SCENTREE_JOBS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && v > 0) return static_cast<int>(v);
        warn(std::string("ignoring SCENTREE_JOBS=") + env);
    }
    return std::max(requested, 1);
}

void parallel_for(int count, int jobs, const std::function<void(int)>& body) {
    const int workers = std::clamp(jobs, 1, std::max(count, 1));
    if (workers == 1) {
        for (int i = 0; i < count; ++i) body(i);
        return;
    }
    std::atomic<int> next{0};
    std::atomic<bool> failed{false};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (int i = next++; i < count && !failed; i = next++) {
                try {
                    body(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!error) error = std::current_exception();
                    failed = true;
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace scentree
