#include "fixtures.hpp"
#include "scentree/errors.hpp"
#include "scentree/process_models.hpp"

#include <Eigen/Dense>
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

using namespace scentree;

TEST_CASE("inverse normal CDF against bisection") {
    for (double p : {1e-12, 1e-6, 0.001, 0.02, 0.0243, 0.1, 0.3, 0.5, 0.77, 0.975, 0.9999, 1 - 1e-9}) {
        double lo = -40, hi = 40;
        for (int k = 0; k < 200; ++k) {
            const double mid = 0.5 * (lo + hi);
            (normal_cdf(mid) < p ? lo : hi) = mid;
        }
        // The bisection oracle resolves x only to about eps / pdf(x) near 1.
        const double x = 0.5 * (lo + hi);
        CHECK(std::abs(normal_quantile(p) - x) < std::max(1e-9, 4e-16 / normal_pdf(x)));
    }
    CHECK_THROWS_AS(normal_quantile(0.0), BetaOutOfRange);
    CHECK_THROWS_AS(normal_quantile(1.0), BetaOutOfRange);
}

TEST_CASE("stage conditional by Schur complement") {
    const auto m = fixtures::small_gaussian();
    for (double x : {-2.0, 0.0, 1.0, 3.5}) {
        const auto c = m.conditional(2, Eigen::VectorXd::Constant(1, x));
        CHECK(std::abs(c.mean[0] - (2 + 0.3 * (x - 1))) <= 1e-10);
        CHECK(std::abs(c.cov(0, 0) - 0.61) <= 1e-10);
    }
    const auto c1 = m.conditional(1, Eigen::VectorXd());
    CHECK(c1.mean[0] == 1.0);
    CHECK(c1.cov(0, 0) == 1.0);
    CHECK_THROWS_AS(m.conditional(2, Eigen::VectorXd()), ShapeMismatch);

    // Stage 3 by hand: C_2 = [[1, .3], [.3, .7]], c = (0, .3).
    Eigen::Matrix2d c2;
    c2 << 1, 0.3, 0.3, 0.7;
    const Eigen::Vector2d c3(0, 0.3);
    const Eigen::Vector2d coef = c2.inverse() * c3;
    Eigen::Vector2d h(0.4, 2.9);
    const auto c = m.conditional(3, h);
    CHECK(std::abs(c.mean[0] - (3 + coef.dot(h - Eigen::Vector2d(1, 2)))) <= 1e-12);
    CHECK(std::abs(c.cov(0, 0) - (0.5 - c3.dot(coef))) <= 1e-12);
}

TEST_CASE("diagonal covariance gives marginal conditionals") {
    Eigen::VectorXd mu(3);
    mu << 1, 2, 3;
    GaussianProcessModel m(1, 3, mu, Eigen::Vector3d(1, 2, 3).asDiagonal());
    const auto c = m.conditional(3, Eigen::Vector2d(10, -10));
    CHECK(c.mean[0] == 3.0);
    CHECK(c.cov(0, 0) == 3.0);
    for (double k : m.lipschitz_constants()) CHECK(k == 0.0);
}

TEST_CASE("tower consistency of chained and joint conditionals") {
    const auto m = fixtures::small_gaussian();
    for (double x : {-1.0, 1.0, 2.5}) {
        const Eigen::VectorXd h1 = Eigen::VectorXd::Constant(1, x);
        const auto joint = m.joint_tail_conditional(2, h1);
        const auto s2 = m.conditional(2, h1);
        CHECK(std::abs(joint.mean[0] - s2.mean[0]) <= 1e-10);
        CHECK(std::abs(joint.cov(0, 0) - s2.cov(0, 0)) <= 1e-10);
        // Stage 3 given (x, y) is affine in y with slope b.
        const double at0 = m.conditional(3, Eigen::Vector2d(x, 0.0)).mean[0];
        const double b = m.conditional(3, Eigen::Vector2d(x, 1.0)).mean[0] - at0;
        const double v3 = m.conditional(3, Eigen::Vector2d(x, 0.0)).cov(0, 0);
        CHECK(std::abs(joint.mean[1] - (at0 + b * s2.mean[0])) <= 1e-10);
        CHECK(std::abs(joint.cov(1, 1) - (v3 + b * b * s2.cov(0, 0))) <= 1e-10);
        CHECK(std::abs(joint.cov(0, 1) - b * s2.cov(0, 0)) <= 1e-10);
    }
    const auto full = m.joint_tail_conditional(1, Eigen::VectorXd());
    CHECK(full.mean == m.mean());
    CHECK(full.cov == m.cov());
    const auto last = m.joint_tail_conditional(3, Eigen::Vector2d(0.3, 1.1));
    const auto step = m.conditional(3, Eigen::Vector2d(0.3, 1.1));
    CHECK(std::abs(last.mean[0] - step.mean[0]) <= 1e-10);
    CHECK(std::abs(last.cov(0, 0) - step.cov(0, 0)) <= 1e-10);

    // Conditional variance stays in (0, c_tt].
    for (int t = 1; t <= 3; ++t) {
        const double v = m.conditional_cov(t)(0, 0);
        CHECK(v > 0.0);
        CHECK(v <= m.cov()(t - 1, t - 1));
    }
}

TEST_CASE("joint tail moments by chained sampling") {
    const auto m = fixtures::small_gaussian();
    const auto joint = m.joint_tail_conditional(2, Eigen::VectorXd::Constant(1, 1.0));
    Rng rng = make_rng(2024);
    std::normal_distribution<double> n;
    const int N = 1000000;
    double s2 = 0, s3 = 0, q2 = 0, q3 = 0;
    for (int k = 0; k < N; ++k) {
        const auto c2 = m.conditional(2, Eigen::VectorXd::Constant(1, 1.0));
        const double x2 = c2.mean[0] + std::sqrt(c2.cov(0, 0)) * n(rng);
        const auto c3 = m.conditional(3, Eigen::Vector2d(1.0, x2));
        const double x3 = c3.mean[0] + std::sqrt(c3.cov(0, 0)) * n(rng);
        s2 += x2, s3 += x3, q2 += x2 * x2, q3 += x3 * x3;
    }
    const double m2 = s2 / N, m3 = s3 / N;
    const double v2 = q2 / N - m2 * m2, v3 = q3 / N - m3 * m3;
    CHECK(std::abs(m2 - joint.mean[0]) <= 3 * std::sqrt(joint.cov(0, 0) / N));
    CHECK(std::abs(m3 - joint.mean[1]) <= 3 * std::sqrt(joint.cov(1, 1) / N));
    CHECK(std::abs(v2 - joint.cov(0, 0)) <= 3 * joint.cov(0, 0) * std::sqrt(2.0 / N));
    CHECK(std::abs(v3 - joint.cov(1, 1)) <= 3 * joint.cov(1, 1) * std::sqrt(2.0 / N));
}

TEST_CASE("path sampling moments") {
    const auto m = fixtures::small_gaussian();
    Rng rng = make_rng(7);
    const int N = 100000;
    Eigen::MatrixXd paths(3, N);
    for (int k = 0; k < N; ++k) paths.col(k) = m.sample_path(rng);
    const Eigen::VectorXd mean = paths.rowwise().mean();
    for (int i = 0; i < 3; ++i) CHECK(std::abs(mean[i] - m.mean()[i]) <= 4 * std::sqrt(m.cov()(i, i) / N));
    const Eigen::MatrixXd centered = paths.colwise() - mean;
    const Eigen::MatrixXd cov = centered * centered.transpose() / (N - 1);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            const double se = std::sqrt((m.cov()(i, i) * m.cov()(j, j) + m.cov()(i, j) * m.cov()(i, j)) / N);
            CHECK(std::abs(cov(i, j) - m.cov()(i, j)) <= 5 * se);
        }

    const double eps = 1e-8;
    GaussianProcessModel tiny(1, 3, m.mean(), eps * Eigen::Matrix3d::Identity());
    const auto p = tiny.sample_path(rng);
    CHECK((p - m.mean()).cwiseAbs().maxCoeff() <= 5 * std::sqrt(eps));

    ProcessModel g{ModelKind::gaussian, m};
    ProcessModel ln{ModelKind::lognormal, m};
    Rng r1 = make_rng(3), r2 = make_rng(3);
    const auto zg = g.sample_path(r1);
    const auto zl = ln.sample_path(r2);
    for (int i = 0; i < 3; ++i) CHECK(zl[i] == doctest::Approx(std::exp(zg[i])).epsilon(1e-15));

    Rng a = make_rng(5), b = make_rng(5);
    CHECK(m.sample_path(a) == m.sample_path(b));
}

TEST_CASE("Lipschitz constants") {
    const auto m = fixtures::small_gaussian();
    const auto k = m.lipschitz_constants();
    REQUIRE(k.size() == 2);
    CHECK(std::abs(k[0] - 0.3) <= 1e-12);
    Eigen::Matrix2d c2;
    c2 << 1, 0.3, 0.3, 0.7;
    const double k3 = (c2.inverse() * Eigen::Vector2d(0, 0.3)).norm();
    CHECK(std::abs(k[1] - k3) <= 1e-12);
    GaussianProcessModel scaled(1, 3, m.mean(), 7.5 * m.cov());
    const auto ks = scaled.lipschitz_constants();
    CHECK(std::abs(ks[0] - k[0]) <= 1e-12);
    CHECK(std::abs(ks[1] - k[1]) <= 1e-12);
    CHECK(m.joint_lipschitz_constant(1) == 0.0);
    CHECK(std::abs(m.joint_lipschitz_constant(3) - k[1]) <= 1e-12);
}

TEST_CASE("shared time covariance layout") {
    Eigen::Matrix2d c;
    c << 2, 0.5, 0.5, 1;
    const auto m = GaussianProcessModel::shared_time(3, Eigen::VectorXd::Zero(6), c);
    CHECK(m.cov()(0, 3) == 0.5);
    CHECK(m.cov()(0, 4) == 0.0);
    CHECK(m.cov()(2, 2) == 2.0);
    const auto cond = m.conditional(2, Eigen::Vector3d(1, 2, 3));
    CHECK(std::abs(cond.mean[1] - 0.25 * 2) <= 1e-12);
    CHECK(std::abs(cond.cov(0, 0) - (1 - 0.125)) <= 1e-12);
    CHECK(std::abs(cond.cov(0, 1)) <= 1e-12);
}

TEST_CASE("invalid covariances") {
    Eigen::Matrix2d bad;
    bad << 1, 2, 2, 1;
    CHECK_THROWS_AS(GaussianProcessModel(1, 2, Eigen::Vector2d::Zero(), bad), SingularSubCovariance);
    Eigen::Matrix2d asym;
    asym << 1, 0.2, 0.1, 1;
    CHECK_THROWS_AS(GaussianProcessModel(1, 2, Eigen::Vector2d::Zero(), asym), ShapeMismatch);
    bool clipped = false;
    const auto fixed = clip_to_psd(bad, 1e-6, &clipped);
    CHECK(clipped);
    CHECK(Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d>(fixed).eigenvalues().minCoeff() >= 1e-6 - 1e-12);
}

TEST_CASE("random models are valid and reproducible") {
    for (int seed = 0; seed < 20; ++seed) {
        Rng a = make_rng(seed), b = make_rng(seed);
        RandomModelInfo info;
        const auto m1 = random_uniform_model(3, 4, 30.0, a, &info);
        const auto m2 = random_uniform_model(3, 4, 30.0, b);
        CHECK(m1.cov() == m2.cov());
        CHECK(m1.mean().maxCoeff() <= 30.0);
        CHECK(m1.mean().minCoeff() >= 0.0);
    }
}

TEST_CASE("quantiles and lower-tail averages") {
    const ScalarDistribution z{ModelKind::gaussian, 0.0, 1.0};
    CHECK(var_quantile(z, 0.5) == doctest::Approx(0.0));
    // Oracle: midpoint quadrature of the quantile function.
    const int steps = 2000000;
    double s = 0.0;
    for (int k = 0; k < steps; ++k) s += normal_quantile(0.5 * (k + 0.5) / steps);
    const double quad = s / steps;
    CHECK(avar(z, 0.5) == doctest::Approx(quad).epsilon(1e-5));
    CHECK(avar(z, 0.5) == doctest::Approx(-std::sqrt(2.0 / std::numbers::pi)).epsilon(1e-12));
    const ScalarDistribution ln{ModelKind::lognormal, 0.0, 1.0};
    CHECK(var_quantile(ln, 0.5) == doctest::Approx(1.0));
    for (double beta = 0.05; beta < 1.0; beta += 0.05) {
        CHECK(avar(z, beta) <= var_quantile(z, beta));
        CHECK(avar(ln, beta) <= var_quantile(ln, beta));
    }
    // Lognormal lower-tail average by quadrature.
    double t = 0.0;
    for (int k = 0; k < steps; ++k) t += std::exp(normal_quantile(0.3 * (k + 0.5) / steps));
    CHECK(avar(ln, 0.3) == doctest::Approx(t / steps).epsilon(1e-5));
    CHECK_THROWS_AS(avar(z, 0.0), BetaOutOfRange);
    CHECK_THROWS_AS(var_quantile(z, 1.5), BetaOutOfRange);
}
