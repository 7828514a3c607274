#include "scentree/errors.hpp"
#include "scentree/experiments.hpp"
#include "scentree/stats.hpp"

#include <doctest.h>

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <set>

using namespace scentree;

namespace {

// Keeps bound-cell runs to a fraction of a second.
Json tiny_bound_params() {
    return Json::parse(R"({
        "lambda": [10.0, 30.0], "D": [1, 2], "T": 2, "b": 2,
        "fb": {"iterations": 300, "stagewise_samples": 400},
        "bound": {"sampled_histories": 8, "kw_samples": 128}})");
}

}  // namespace

TEST_CASE("binomial test against exact sums") {
    // Oracles: sum_{k >= s} C(n, k) p^k (1 - p)^(n - k) in exact integer arithmetic.
    auto t = binomial_test(20, 30, 0.5);
    CHECK(t.p_value == doctest::Approx(0.04936857335269451).epsilon(1e-12));
    CHECK(t.frequency == doctest::Approx(2.0 / 3.0));
    // Clopper-Pearson ends are beta quantiles Beta(k, n-k+1) at 0.025 and Beta(k+1, n-k) at 0.975.
    CHECK(t.lower == doctest::Approx(0.47187995521011944).epsilon(1e-10));
    CHECK(t.upper == doctest::Approx(0.8271257784739607).epsilon(1e-10));
    CHECK(binomial_test(30, 50, 0.5).p_value == doctest::Approx(0.10131937553227033).epsilon(1e-12));
    CHECK(binomial_test(6, 10, 0.3).p_value == doctest::Approx(0.04734898739999998).epsilon(1e-12));
    CHECK(binomial_test(0, 10, 0.5).p_value == 1.0);
    CHECK(binomial_test(0, 2, 0.5).upper == doctest::Approx(1.0 - std::sqrt(0.025)));
    CHECK_THROWS_AS(binomial_test(3, 2, 0.5), InvalidParameter);
}

TEST_CASE("sign test drops ties") {
    auto s = sign_test({1, 2, -1, 0, 0, 3});
    CHECK(s.positive == 3);
    CHECK(s.negative == 1);
    CHECK(s.ties == 2);
    CHECK(s.p_value == doctest::Approx(5.0 / 16.0));
    CHECK(sign_test({0, 0}).p_value == 1.0);
}

TEST_CASE("summary statistics and linear fit") {
    auto s = summarize({1, 2, 3, 4});
    CHECK(s.mean == 2.5);
    CHECK(s.std_dev == doctest::Approx(std::sqrt(5.0 / 3.0)));
    CHECK(s.std_error == doctest::Approx(std::sqrt(5.0 / 3.0) / 2.0));
    CHECK(s.min == 1);
    CHECK(s.max == 4);
    std::vector<double> x1{0, 1, 2, 3, 4}, x2{1, 0, 1, 0, 2}, y;
    for (std::size_t i = 0; i < x1.size(); ++i) y.push_back(0.5 + 2 * x1[i] - 3 * x2[i]);
    auto c = linear_fit({x1, x2}, y);
    CHECK(c[0] == doctest::Approx(0.5));
    CHECK(c[1] == doctest::Approx(2.0));
    CHECK(c[2] == doctest::Approx(-3.0));
}

TEST_CASE("worker pool covers every cell once and propagates errors") {
    std::vector<std::atomic<int>> hits(97);
    parallel_for(97, 4, [&](int i) { hits[i]++; });
    for (auto& h : hits) CHECK(h.load() == 1);
    CHECK_THROWS_AS(parallel_for(20, 3,
                                 [](int i) {
                                     if (i == 7) throw DegenerateInput("cell 7");
                                 }),
                    DegenerateInput);
    parallel_for(0, 4, [](int) { FAIL("no cells"); });
}

TEST_CASE("SCENTREE_JOBS overrides the requested job count") {
    ::unsetenv("SCENTREE_JOBS");
    CHECK(resolve_jobs(3) == 3);
    CHECK(resolve_jobs(0) == 1);
    ::setenv("SCENTREE_JOBS", "5", 1);
    CHECK(resolve_jobs(2) == 5);
    ::setenv("SCENTREE_JOBS", "zero", 1);
    set_warnings_enabled(false);
    CHECK(resolve_jobs(2) == 2);
    set_warnings_enabled(true);
    ::unsetenv("SCENTREE_JOBS");
}

TEST_CASE("config parsing") {
    auto flat = experiment_config_from_json("bound-gap", Json::parse(R"({"seed": 4, "replications": 7, "T": 3})"));
    CHECK(flat.seed == 4);
    CHECK(flat.replications == 7);
    CHECK(flat.params["T"] == 3);
    auto nested = experiment_config_from_json("inventory", Json::parse(R"({"params": {"mean": 50}})"));
    CHECK(nested.params["mean"] == 50);
    CHECK_THROWS_AS(experiment_config_from_json("nope", Json::object()), InvalidParameter);
    CHECK_THROWS_AS(experiment_config_from_json("branchiness", Json::parse(R"({"replications": 0})")),
                    InvalidParameter);
}

TEST_CASE("bound cells are reproducible and independent of the job count") {
    set_warnings_enabled(false);
    ExperimentConfig cfg{"bound-gap", 5, 3, 1, tiny_bound_params()};
    const auto a = run_experiment(cfg);
    cfg.jobs = 3;
    const auto b = run_experiment(cfg);
    CHECK(a.to_csv() == b.to_csv());
    CHECK(a.rows.size() == 6);
    CHECK(a.columns.front() == "cell");
    CHECK(a.to_csv().substr(0, a.to_csv().find('\n')) ==
          "cell,seed,replicate,kind,lambda,D,T,b,kw_eq7,fb_eq7,gap_eq7,fb_below_eq7,kw_eq14,fb_eq14,fb_below_eq14");
    // Lambda cells of one replicate share the instance shape.
    const auto d = a.column("D");
    CHECK(d[0] == d[3]);
    CHECK(d[1] == d[4]);
    for (double v : a.column("kw_eq7")) CHECK(v > 0);
    CHECK(a.summary["gaussian"]["groups"].size() == 2);

    // A fixed instance seed pins the instance whatever the harness seed.
    cfg.params["instance_seed"] = 42;
    cfg.seed = 1;
    const auto c1 = run_experiment(cfg);
    cfg.seed = 2;
    const auto c2 = run_experiment(cfg);
    CHECK(c1.column("D") == c2.column("D"));
    CHECK(c1.column("T") == c2.column("T"));
    cfg.seed = 1;
    CHECK(run_experiment(cfg).to_csv() == c1.to_csv());
    set_warnings_enabled(true);
}

TEST_CASE("zero dependency multiplier gives statistically zero gaps") {
    set_warnings_enabled(false);
    Json p = tiny_bound_params();
    p["lambda"] = Json::array({0.0});
    const auto r = run_bound_gap_sweep({"bound-gap", 3, 4, 1, p});
    for (double g : r.column("gap_eq7")) CHECK(std::abs(g) < 1e-2);
    set_warnings_enabled(true);
}

TEST_CASE("success-prob evaluates both kinds on the same trees") {
    set_warnings_enabled(false);
    Json p = tiny_bound_params();
    p["lambda"] = Json::array({10.0});
    p["D"] = 1;
    const auto r = run_success_probability({"success-prob", 9, 2, 1, p});
    REQUIRE(r.rows.size() == 4);
    CHECK(std::get<std::string>(r.rows[0][3]) == "gaussian");
    CHECK(std::get<std::string>(r.rows[1][3]) == "lognormal");
    CHECK(std::isnan(r.column("kw_eq14")[0]));
    CHECK(r.summary.contains("lognormal"));
    set_warnings_enabled(true);
}

TEST_CASE("branchiness series vanishes where the reference equals the approximation") {
    Json p = Json::parse(R"({"reference_b": [2, 3, 4], "fb": {"iterations": 300}})");
    const auto r = run_branchiness_convergence({"branchiness", 1, 3, 1, p});
    CHECK(r.rows.size() == 3 * 3 * 3);
    for (const auto& row : r.rows) {
        if (std::get<std::string>(row[3]) == "stagewise" && std::get<long long>(row[4]) == 2) {
            CHECK(std::get<double>(row[5]) == doctest::Approx(0.0).epsilon(1e-12));
        } else {
            CHECK(std::get<double>(row[5]) > 0.0);
        }
    }
    CHECK(r.summary["stagewise_plateau_le_monte_carlo"]["trials"] == 3);
}

TEST_CASE("inventory benchmark sections") {
    set_warnings_enabled(false);
    Json p = Json::parse(R"({
        "sections": ["stationary", "retention", "capacity", "patterns"],
        "stationary": {"T": 2, "b": 8, "instances": 2},
        "retention": {"T": 2, "b": 4, "l": [0.05, 0.5, 0.95]},
        "capacity": {"T": 2, "b": 4, "values": [20, 60, 100, 500, 1000]},
        "patterns": {"names": ["bell"], "T": 2, "b": [2, 4], "methods": ["monte_carlo", "fb"]},
        "fb": {"iterations": 500}})");
    const auto r = run_inventory_benchmark({"inventory", 2, 2, 2, p});
    for (const auto& s : r.summary["stationary"]) CHECK(s["abs_rel_error"].get<double>() < 0.02);
    CHECK(r.summary["retention"]["closed_form_interior_minimum"] == true);
    CHECK(r.summary["capacity"]["non_decreasing"] == true);
    CHECK(r.summary["capacity"]["last_relative_step"].get<double>() < 1e-3);
    CHECK(r.summary["patterns"]["bell"]["fb"]["4"]["range"].get<double>() >= 0.0);
    // Closed form of the h = 1 + l sweep is symmetric in l around 1/2.
    const auto& curve = r.summary["retention"]["curve"];
    CHECK(curve[0]["closed_form"].get<double>() == doctest::Approx(curve[2]["closed_form"].get<double>()));
    set_warnings_enabled(true);
}

TEST_CASE("reports are written as three files") {
    Json p = Json::parse(R"({"reference_b": [2, 3], "methods": ["stagewise"]})");
    const auto r = run_branchiness_convergence({"branchiness", 1, 1, 1, p});
    const auto dir = std::filesystem::temp_directory_path() / "scentree_report_test";
    std::filesystem::remove_all(dir);
    write_report(r, dir);
    CHECK(std::filesystem::exists(dir / "report.csv"));
    CHECK(read_json_file(dir / "report.json")["rows"].size() == 2);
    const auto meta = read_json_file(dir / "meta.json");
    CHECK(meta["id"] == "branchiness");
    CHECK(meta["seed"] == 1);
    CHECK(meta.contains("cell_seconds"));
    std::filesystem::remove_all(dir);
}
