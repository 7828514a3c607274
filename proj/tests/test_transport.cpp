#include "scentree/errors.hpp"
#include "scentree/transport.hpp"

#include <doctest.h>

#include <random>

using namespace scentree;

namespace {

std::vector<double> random_weights(std::mt19937_64& rng, int n, bool allow_zero) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> w(n);
    double s = 0.0;
    for (auto& x : w) {
        x = u(rng);
        if (allow_zero && u(rng) < 0.2) x = 0.0;
        s += x;
    }
    if (s == 0.0) {
        w[0] = 1.0;
        s = 1.0;
    }
    for (auto& x : w) x /= s;
    return w;
}

// Sums to one by construction: quantized weights over a common denominator.
std::vector<double> grid_weights(std::mt19937_64& rng, int n) {
    std::uniform_int_distribution<int> k(0, 4);
    std::vector<int> c(n);
    int s = 0;
    for (auto& x : c) s += (x = k(rng));
    if (s == 0) c[0] = s = 1;
    std::vector<double> w(n);
    for (int i = 0; i < n; ++i) w[i] = static_cast<double>(c[i]) / s;
    return w;
}

}  // namespace

TEST_CASE("identical distributions cost nothing") {
    Eigen::MatrixXd x(1, 3);
    x << 0, 1, 5;
    const auto c = pairwise_cost(x, x);
    const std::vector<double> w{0.2, 0.3, 0.5};
    const auto res = solve_transport(c, w, w);
    CHECK(res.objective == doctest::Approx(0.0).epsilon(1e-15));
    for (int i = 0; i < 3; ++i) CHECK(res.plan.flow(i, i) == doctest::Approx(w[i]));
}

TEST_CASE("marginals force the plan") {
    Eigen::MatrixXd c(2, 1);
    c << 0, 1;
    const std::vector<double> a{0.5, 0.5};
    const std::vector<double> b{1.0};
    CHECK(solve_transport(c, a, b).objective == doctest::Approx(0.5));
}

TEST_CASE("transport errors") {
    Eigen::MatrixXd c = Eigen::MatrixXd::Zero(2, 2);
    const std::vector<double> a{0.5, 0.5};
    const std::vector<double> b{0.5, 0.6};
    CHECK_THROWS_AS(solve_transport(c, a, b), InfeasibleMarginals);
    CHECK_THROWS_AS(solve_transport(Eigen::MatrixXd(0, 0), std::vector<double>{}, std::vector<double>{}), DegenerateInput);
    CHECK_THROWS_AS(brute_force_transport(Eigen::MatrixXd::Zero(5, 5), std::vector<double>(5, 0.2),
                                          std::vector<double>(5, 0.2)),
                    SizeLimitExceeded);
}

TEST_CASE("brute force oracle on trivial instances") {
    Eigen::MatrixXd one(1, 1);
    one << 3.5;
    CHECK(brute_force_transport(one, std::vector<double>{1.0}, std::vector<double>{1.0}) == 3.5);
    Eigen::MatrixXd c(2, 2);
    c << 0, 1, 1, 0;
    CHECK(brute_force_transport(c, std::vector<double>{0.5, 0.5}, std::vector<double>{0.5, 0.5}) == 0.0);
}

TEST_CASE("network simplex matches vertex enumeration") {
    std::mt19937_64 rng(20240601);
    std::uniform_int_distribution<int> dim(1, 4);
    std::uniform_real_distribution<double> u(0.0, 10.0);
    for (int rep = 0; rep < 300; ++rep) {
        const int m = dim(rng);
        const int n = dim(rng);
        Eigen::MatrixXd c(m, n);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) c(i, j) = rep % 3 == 0 ? std::floor(u(rng)) : u(rng);
        const auto a = rep % 2 ? grid_weights(rng, m) : random_weights(rng, m, rep % 5 == 0);
        const auto b = rep % 2 ? grid_weights(rng, n) : random_weights(rng, n, rep % 7 == 0);
        const auto res = solve_transport(c, a, b);
        CHECK(res.objective == doctest::Approx(brute_force_transport(c, a, b)).epsilon(1e-12));
        CHECK(res.plan.max_row_residual <= 1e-9);
        CHECK(res.plan.max_col_residual <= 1e-9);
        CHECK(std::abs(res.duality_gap()) <= 1e-9 * (1 + std::abs(res.objective)));
        CHECK(res.plan.flow.minCoeff() >= 0.0);
    }
}

TEST_CASE("larger degenerate instances keep a zero duality gap") {
    std::mt19937_64 rng(5);
    for (int rep = 0; rep < 20; ++rep) {
        const int m = 30;
        const int n = 25;
        Eigen::MatrixXd c(m, n);
        std::uniform_int_distribution<int> k(0, 3);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) c(i, j) = k(rng);
        const auto a = grid_weights(rng, m);
        const auto b = grid_weights(rng, n);
        const auto res = solve_transport(c, a, b);
        CHECK(std::abs(res.duality_gap()) <= 1e-9 * (1 + std::abs(res.objective)));
        // Dual feasibility of the returned potentials.
        double worst = 0.0;
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) worst = std::min(worst, c(i, j) - res.row_potential[i] - res.col_potential[j]);
        CHECK(worst >= -1e-9);
    }
}

TEST_CASE("permutation invariance") {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Eigen::MatrixXd c(4, 3);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 3; ++j) c(i, j) = u(rng);
    const auto a = random_weights(rng, 4, false);
    const auto b = random_weights(rng, 3, false);
    const std::vector<int> pr{2, 0, 3, 1};
    const std::vector<int> pc{1, 2, 0};
    Eigen::MatrixXd c2(4, 3);
    std::vector<double> a2(4), b2(3);
    for (int i = 0; i < 4; ++i) {
        a2[i] = a[pr[i]];
        for (int j = 0; j < 3; ++j) c2(i, j) = c(pr[i], pc[j]);
    }
    for (int j = 0; j < 3; ++j) b2[j] = b[pc[j]];
    CHECK(solve_transport(c, a, b).objective == doctest::Approx(solve_transport(c2, a2, b2).objective).epsilon(1e-12));
}

TEST_CASE("kw distance basics") {
    Eigen::VectorXd p(2), q(2);
    p << 1, 2;
    q << 4, 6;
    for (double r : {1.0, 2.0, 3.0}) {
        CHECK(kw_distance(DiscreteDistribution::point_mass(p), DiscreteDistribution::point_mass(q), r) ==
              doctest::Approx(5.0));
    }
    Eigen::MatrixXd x(1, 3), y(1, 2);
    x << 0, 1, 2;
    y << 0, 2;
    const auto P = DiscreteDistribution::uniform(x);
    const auto Q = DiscreteDistribution::uniform(y);
    const double oracle = brute_force_transport(pairwise_cost(x, y).values, P.weights, Q.weights);
    CHECK(kw_distance(P, Q) == doctest::Approx(oracle).epsilon(1e-12));
    CHECK(kw_distance(P, Q) == doctest::Approx(1.0 / 3.0));
    CHECK(kw_distance(P, P) == 0.0);
}

TEST_CASE("one-dimensional fast path agrees with the general solver") {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> u(-5.0, 5.0);
    for (int rep = 0; rep < 50; ++rep) {
        Eigen::MatrixXd x(1, 6), y(1, 4);
        for (int i = 0; i < 6; ++i) x(0, i) = u(rng);
        for (int i = 0; i < 4; ++i) y(0, i) = u(rng);
        const auto wa = random_weights(rng, 6, false);
        const auto wb = random_weights(rng, 4, false);
        for (double r : {1.0, 2.0}) {
            const double fast = kw_distance({x, wa}, {y, wb}, r);
            const double lp = std::pow(solve_transport(pairwise_cost(x, y, r).values, wa, wb).objective, 1.0 / r);
            CHECK(fast == doctest::Approx(lp).epsilon(1e-10));
        }
    }
}

TEST_CASE("kw triangle inequality and scale equivariance") {
    std::mt19937_64 rng(23);
    std::normal_distribution<double> n;
    auto draw = [&](int k) {
        Eigen::MatrixXd a(2, k);
        for (int i = 0; i < k; ++i) a(0, i) = n(rng), a(1, i) = n(rng);
        return DiscreteDistribution{a, random_weights(rng, k, false)};
    };
    for (int rep = 0; rep < 30; ++rep) {
        const auto a = draw(4), b = draw(5), c = draw(3);
        CHECK(kw_distance(a, c) <= kw_distance(a, b) + kw_distance(b, c) + 1e-8);
        CHECK(kw_distance(a, b) == doctest::Approx(kw_distance(b, a)).epsilon(1e-12));
        const double s = 3.7;
        DiscreteDistribution as{a.atoms * s, a.weights}, bs{b.atoms * s, b.weights};
        CHECK(std::abs(kw_distance(as, bs) - s * kw_distance(a, b)) <= 1e-9);
    }
}
