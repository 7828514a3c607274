#include "fixtures.hpp"
#include "scentree/errors.hpp"
#include "scentree/inventory.hpp"
#include "scentree/quantize.hpp"

#include <Eigen/Dense>
#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace scentree;

namespace {

InventorySpec scalar_spec(int T, double mu, double var, double h, double l, ModelKind kind = ModelKind::gaussian) {
    GaussianProcessModel m(1, T, Eigen::VectorXd::Constant(T, mu), var * Eigen::MatrixXd::Identity(T, T));
    return {std::vector<double>(T, h), std::vector<double>(T, l), {}, std::nullopt, {kind, m}};
}

InventorySpec spec_for_tree(const ScenarioTree& tree, std::mt19937_64& rng) {
    const int T = tree.stage_count();
    const int D = tree.dim();
    std::uniform_real_distribution<double> u(0.0, 1.0);
    GaussianProcessModel m(D, T, Eigen::VectorXd::Zero(D * T), Eigen::MatrixXd::Identity(D * T, D * T));
    InventorySpec spec{{}, {}, {}, std::nullopt, {ModelKind::gaussian, m}};
    for (int t = 0; t < T; ++t) {
        spec.h.push_back(1.05 + 2.0 * u(rng));
        spec.l.push_back(0.05 + 0.95 * u(rng));
    }
    return spec;
}

// Balance, sign and capacity invariants of a tree solution.
void check_solution(const InventorySpec& spec, const ScenarioTree& tree, const InventorySolution& sol) {
    const auto& topo = tree.topology();
    for (int d = 0; d < tree.dim(); ++d) {
        for (NodeId n = 1; n < topo.node_count(); ++n) {
            const NodeId p = topo.parent(n);
            const int t = topo.stage(n);
            const double carried = p == 0 ? 0.0 : spec.l[t - 2] * sol.inventory(d, p);
            CHECK(sol.inventory(d, n) >= -1e-9);
            CHECK(sol.shortage(d, n) >= -1e-9);
            CHECK(sol.order(d, p) >= -1e-9);
            const double lhs = carried + sol.order(d, p) - tree.value(n)(d);
            CHECK(std::abs(lhs - (sol.inventory(d, n) - sol.shortage(d, n))) <= 1e-8);
            if (spec.capacity) CHECK(carried + sol.order(d, p) <= *spec.capacity + 1e-8);
        }
    }
}

// Expected objective of the decisions in a tree solution.
double realized_value(const InventorySpec& spec, const ScenarioTree& tree, const InventorySolution& sol) {
    const auto& topo = tree.topology();
    const auto prob = tree.node_probabilities();
    double v = 0.0;
    for (NodeId n = 0; n < topo.node_count(); ++n) {
        if (!topo.is_leaf(n)) v -= prob[n] * sol.order.col(n).sum();
        if (n == 0) continue;
        v -= prob[n] * spec.h[topo.stage(n) - 1] * sol.shortage.col(n).sum();
        if (topo.is_leaf(n)) v += prob[n] * spec.l.back() * sol.inventory.col(n).sum();
    }
    return v;
}

}  // namespace

TEST_CASE("perfect foresight on a single path") {
    auto spec = scalar_spec(3, 5.0, 1.0, 1.7, 0.4);
    const auto path = single_path_tree({Eigen::VectorXd::Constant(1, 5.0), Eigen::VectorXd::Constant(1, 7.0),
                                        Eigen::VectorXd::Constant(1, 3.0)});
    for (auto method : {InventoryMethod::dynamic_programming, InventoryMethod::linear_program}) {
        const auto sol = solve_on_tree(spec, path, method);
        CHECK(sol.value == doctest::Approx(-15.0));
        CHECK(sol.order(0, 0) == doctest::Approx(5.0));
        CHECK(sol.order(0, 1) == doctest::Approx(7.0));
        CHECK(sol.order(0, 2) == doctest::Approx(3.0));
    }
    spec.s = {2.0, 2.0, 2.0};
    CHECK(*solve_on_tree(spec, path).profit == doctest::Approx(-15.0 + 30.0));
}

TEST_CASE("recursion matches the dense LP") {
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int rep = 0; rep < 40; ++rep) {
        const int T = 1 + rep % 3;
        const auto tree = fixtures::random_tree(rng, T, 3, 1 + rep % 2, 20.0);
        auto spec = spec_for_tree(tree, rng);
        if (rep % 3 == 1) spec.capacity = 5.0 + 15.0 * u(rng);
        const auto dp = solve_on_tree(spec, tree);
        const auto lp = solve_on_tree(spec, tree, InventoryMethod::linear_program);
        CHECK(dp.value == doctest::Approx(lp.value).epsilon(1e-9));
        CHECK(lp.duality_gap <= 1e-8);
        check_solution(spec, tree, dp);
        check_solution(spec, tree, lp);
        CHECK(realized_value(spec, tree, dp) == doctest::Approx(dp.value).epsilon(1e-9));
        CHECK(realized_value(spec, tree, lp) == doctest::Approx(lp.value).epsilon(1e-9));
    }
}

TEST_CASE("products separate") {
    std::mt19937_64 rng(8);
    const auto tree = fixtures::random_tree(rng, 3, 3, 2, 20.0);
    const auto spec = spec_for_tree(tree, rng);
    const auto joint = solve_on_tree(spec, tree);
    double sum = 0.0;
    for (int d = 0; d < 2; ++d) {
        const ScenarioTree one(tree.topology(), tree.values().row(d), tree.cond_probs());
        auto s1 = spec;
        s1.demand.core = GaussianProcessModel(1, 3, Eigen::VectorXd::Zero(3), Eigen::Matrix3d::Identity());
        sum += solve_on_tree(s1, one).value;
    }
    CHECK(joint.value == doctest::Approx(sum).epsilon(1e-6));
}

TEST_CASE("capacity monotonicity and saturation") {
    const auto spec0 = scalar_spec(2, 100.0, 100.0, 1.6, 0.5);
    const int b[] = {6, 6};
    QuantizeConfig cfg;
    const auto tree = stagewise_optimal_tree(spec0.demand, TreeTopology::balanced(b), cfg);
    const double free = solve_on_tree(spec0, tree).value;
    double previous = -std::numeric_limits<double>::infinity();
    for (double cap : {60.0, 80.0, 95.0, 100.0, 105.0, 115.0, 130.0, 200.0, 1000.0}) {
        auto spec = spec0;
        spec.capacity = cap;
        const auto sol = solve_on_tree(spec, tree);
        check_solution(spec, tree, sol);
        CHECK(sol.value >= previous - 1e-9);
        CHECK(sol.value <= free + 1e-9);
        previous = sol.value;
    }
    CHECK(std::abs(previous - free) <= 1e-3 * std::abs(free));
    auto bad = spec0;
    bad.capacity = -1.0;
    CHECK_THROWS_AS(solve_on_tree(bad, tree), Infeasible);
}

TEST_CASE("single-period closed form") {
    const auto spec = scalar_spec(1, 100.0, 100.0, 1.5, 0.5);
    CHECK(spec.beta(1) == 0.5);
    const double hand = -150.0 + 0.5 * (100.0 - 2.0 * std::sqrt(100.0 / (2.0 * std::numbers::pi)));
    CHECK(closed_form_value_gaussian(spec) == doctest::Approx(hand).epsilon(1e-13));
    CHECK(std::abs(closed_form_value_gaussian(spec) - (-103.99)) <= 0.01);

    const OrderPolicy policy = [&](int t, const Eigen::VectorXd& h, const Eigen::VectorXd& k) {
        return closed_form_policy(spec, t, h, k);
    };
    const auto sim = simulate_policy(spec, policy, 200000, 11);
    CHECK(std::abs(sim.mean - hand) <= 3 * sim.std_error);
    CHECK(sim.clamped == 0);

    const OrderPolicy nothing = [](int, const Eigen::VectorXd&, const Eigen::VectorXd& k) {
        return Eigen::VectorXd::Zero(k.size()).eval();
    };
    CHECK(simulate_policy(spec, nothing, 20000, 11).mean < hand - 10.0);
}

TEST_CASE("closed form limits and linearity") {
    // h -> 1+: the value rises toward -sum mu.
    double previous = -std::numeric_limits<double>::infinity();
    for (double h : {2.0, 1.5, 1.2, 1.05, 1.01, 1.001}) {
        const double v = closed_form_value_gaussian(scalar_spec(2, 100.0, 100.0, h, 0.3));
        CHECK(v < -200.0);
        CHECK(v > previous);
        previous = v;
    }
    CHECK(previous > -200.5);
    CHECK_THROWS_AS(closed_form_value_gaussian(scalar_spec(2, 100.0, 100.0, 1.0, 0.3)), BetaOutOfRange);

    // Stationary parameters: exactly linear in T.
    std::vector<double> v;
    for (int T = 1; T <= 6; ++T) {
        Eigen::MatrixXd c = Eigen::MatrixXd::Constant(T, T, 0.0);
        for (int i = 0; i < T; ++i) c(i, i) = 100.0;
        GaussianProcessModel m(1, T, Eigen::VectorXd::Constant(T, 100.0), c);
        v.push_back(closed_form_value_gaussian({std::vector<double>(T, 1.4), std::vector<double>(T, 0.05), {},
                                                std::nullopt, {ModelKind::gaussian, m}}));
    }
    for (std::size_t i = 2; i < v.size(); ++i) CHECK(std::abs(v[i] - 2 * v[i - 1] + v[i - 2]) <= 1e-9);
}

TEST_CASE("lognormal closed forms") {
    const auto spec = scalar_spec(1, 0.0, 1.0, 1.5, 0.5, ModelKind::lognormal);
    const double e = std::exp(0.5);
    const double phi_m1 = normal_cdf(-1.0);
    CHECK(phi_m1 == doctest::Approx(0.158655).epsilon(1e-5));
    CHECK(closed_form_value_lognormal(spec) == doctest::Approx(-1.5 * e + 0.5 * (1.0 - e * phi_m1 / 0.5)));
    CHECK(lognormal_value_from_avar(spec) == doctest::Approx(-1.5 * e + 0.5 * e * phi_m1 / 0.5));

    const OrderPolicy policy = [&](int t, const Eigen::VectorXd& h, const Eigen::VectorXd& k) {
        return closed_form_policy(spec, t, h, k);
    };
    const auto sim = simulate_policy(spec, policy, 400000, 5);
    CHECK(std::abs(sim.mean - lognormal_value_from_avar(spec)) <= 3 * sim.std_error);

    // Degenerate variance: the value of known demand e^mu.
    const auto tight = scalar_spec(2, 1.0, 1e-14, 1.5, 0.5, ModelKind::lognormal);
    CHECK(lognormal_value_from_avar(tight) == doctest::Approx(-2.0 * std::exp(1.0)).epsilon(1e-6));
    CHECK_FALSE(closed_form_value_lognormal(tight) == doctest::Approx(-2.0 * std::exp(1.0)).epsilon(1e-3));
}

TEST_CASE("closed-form policy") {
    const auto spec = scalar_spec(2, 100.0, 100.0, 1.5, 0.5);
    const Eigen::VectorXd none(0);
    CHECK(closed_form_policy(spec, 0, none, Eigen::VectorXd::Zero(1))[0] == doctest::Approx(100.0));
    const Eigen::VectorXd hist = Eigen::VectorXd::Constant(1, 90.0);
    const double var = closed_form_policy(spec, 1, hist, Eigen::VectorXd::Zero(1))[0];
    CHECK(var == doctest::Approx(100.0));
    CHECK(closed_form_policy(spec, 1, hist, Eigen::VectorXd::Constant(1, var / 0.5))[0] == doctest::Approx(0.0).epsilon(1e-12));

    // Two stages, correlated: simulation against the closed form.
    Eigen::Matrix2d c;
    c << 100, 8, 8, 100;
    InventorySpec two{{1.7, 1.3}, {0.08, 0.05}, {}, std::nullopt, {ModelKind::gaussian, GaussianProcessModel(1, 2, Eigen::Vector2d(100, 100), c)}};
    const OrderPolicy policy = [&](int t, const Eigen::VectorXd& h, const Eigen::VectorXd& k) {
        return closed_form_policy(two, t, h, k);
    };
    const auto sim = simulate_policy(two, policy, 200000, 2);
    CHECK(std::abs(sim.mean - closed_form_value_gaussian(two)) <= 3 * sim.std_error);
}

TEST_CASE("deterministic demand simulation equals the closed form") {
    const auto spec = scalar_spec(3, 50.0, 1e-20, 1.5, 0.3);
    const OrderPolicy policy = [&](int t, const Eigen::VectorXd& h, const Eigen::VectorXd& k) {
        return closed_form_policy(spec, t, h, k);
    };
    const auto sim = simulate_policy(spec, policy, 10, 1);
    CHECK(sim.mean == doctest::Approx(closed_form_value_gaussian(spec)).epsilon(1e-9));
    CHECK(sim.mean == doctest::Approx(-150.0).epsilon(1e-9));
}

TEST_CASE("tree values approach the closed form") {
    Rng rng = make_rng(3);
    const auto spec = random_inventory_spec(2, rng);
    CHECK(spec.stages() == 2);
    for (int t = 1; t <= 2; ++t) {
        CHECK(spec.beta(t) > 0.0);
        CHECK(spec.beta(t) < 1.0);
    }
    const double exact = closed_form_value_gaussian(spec);
    double previous_gap = std::numeric_limits<double>::infinity();
    for (int b : {5, 10, 30}) {
        const int bb[] = {b, b};
        const auto tree = stagewise_optimal_tree(spec.demand, TreeTopology::balanced(bb), QuantizeConfig{});
        const double gap = std::abs(solve_on_tree(spec, tree).value - exact);
        CHECK(gap <= previous_gap + 1e-9);
        previous_gap = gap;
    }
    CHECK(previous_gap <= 0.03 * std::abs(exact));
}

TEST_CASE("dependent products order above mean demand when beta exceeds one half") {
    Eigen::Matrix3d c;
    c << 1.0, 0.5, 0.3, 0.5, 1.0, 0.4, 0.3, 0.4, 1.0;
    Eigen::Matrix2d time;
    time << 1.0, 0.6, 0.6, 1.0;
    // Three products over two stages; kron(time, c) couples products and stages.
    Eigen::MatrixXd cov(6, 6);
    for (int s = 0; s < 2; ++s)
        for (int t = 0; t < 2; ++t) cov.block(3 * s, 3 * t, 3, 3) = 25.0 * time(s, t) * c;
    Eigen::VectorXd mu(6);
    mu << 50, 60, 70, 50, 60, 70;
    InventorySpec spec{{3.0, 3.0}, {0.5, 0.5}, {}, std::nullopt, {ModelKind::gaussian, GaussianProcessModel(3, 2, mu, cov)}};
    CHECK(spec.beta(1) > 0.5);
    QuantizeConfig cfg;
    cfg.stagewise_samples = 5000;
    const int b[] = {5, 4};
    const auto tree = stagewise_optimal_tree(spec.demand, TreeTopology::balanced(b), cfg);
    const auto sol = solve_on_tree(spec, tree);
    check_solution(spec, tree, sol);
    for (int d = 0; d < 3; ++d) CHECK(sol.order(d, 0) > mu[d]);
}

TEST_CASE("inventory spec validation") {
    auto spec = scalar_spec(2, 100.0, 100.0, 1.5, 0.5);
    spec.l[1] = 0.0;
    CHECK_THROWS_AS(spec.validate(), InvalidParameter);
    spec.l[1] = 0.5;
    spec.h.pop_back();
    CHECK_THROWS_AS(spec.validate(), ShapeMismatch);
    spec.h = {1.5, 0.9};
    CHECK_THROWS_AS(spec.validate(), BetaOutOfRange);
}
