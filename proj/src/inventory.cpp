#include "scentree/inventory.hpp"

#include "scentree/errors.hpp"
#include "scentree/lp.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <limits>

namespace scentree {

namespace {

constexpr std::uint64_t kSimulationStream = 0x494e56;

/// Concave piecewise-linear f(x) = a + s x + sum_j d_j (x - b_j)^+ on x >= 0.
struct Pwl {
    double a = 0.0;
    double s = 0.0;
    std::vector<std::pair<double, double>> kinks;

    /// Sorts the kinks and folds those at b <= 0 into a and s.
    void normalize() {
        std::sort(kinks.begin(), kinks.end());
        std::size_t keep = 0;
        for (const auto& [b, d] : kinks) {
            if (b <= 0.0) {
                a -= d * b;
                s += d;
            } else if (keep > 0 && kinks[keep - 1].first == b) {
                kinks[keep - 1].second += d;
            } else {
                kinks[keep++] = {b, d};
            }
        }
        kinks.resize(keep);
    }

    double operator()(double x) const {
        double v = a + s * x;
        for (const auto& [b, d] : kinks) {
            if (b >= x) break;
            v += d * (x - b);
        }
        return v;
    }

    /// Leftmost maximizer on [0, cap].
    double argmax(double cap) const {
        const double tol = 1e-12 * (1.0 + std::abs(s));
        double slope = s;
        if (slope <= tol) return 0.0;
        for (const auto& [b, d] : kinks) {
            if (b >= cap) return cap;
            slope += d;
            if (slope <= tol) return b;
        }
        if (std::isinf(cap)) throw Infeasible("inventory value is unbounded");
        return cap;
    }

    /// Slope just right of x.
    double slope_after(double x) const {
        double slope = s;
        for (const auto& [b, d] : kinks) {
            if (b > x) break;
            slope += d;
        }
        return slope;
    }
};

/// Per-node data of one product's backward recursion.
struct NodeFunctions {
    std::vector<double> target;  // optimal post-order stock level y* per decision node
    double value = 0.0;
};

double stage_l(const InventorySpec& spec, int t) { return spec.l[t - 1]; }
double stage_h(const InventorySpec& spec, int t) { return spec.h[t - 1]; }

NodeFunctions solve_product_dp(const InventorySpec& spec, const ScenarioTree& tree, int d) {
    const auto& topo = tree.topology();
    const int T = topo.stage_count();
    const double cap = spec.capacity ? *spec.capacity : std::numeric_limits<double>::infinity();
    std::vector<Pwl> value_fn(topo.node_count());  // V(K) at the node, K = stock after its demand
    NodeFunctions out;
    out.target.assign(topo.node_count(), 0.0);
    for (NodeId n = topo.node_count() - 1; n >= 0; --n) {
        if (topo.is_leaf(n)) {
            value_fn[n].s = stage_l(spec, T);
            continue;
        }
        const int t = topo.stage(n) + 1;
        const double h = stage_h(spec, t);
        Pwl g;
        g.s = -1.0;
        for (NodeId c : topo.children(n)) {
            const double p = tree.cond_prob(c);
            const double xi = tree.value(c)(d);
            const Pwl& v = value_fn[c];
            g.a += p * (v.a - h * xi);
            g.s += p * h;
            g.kinks.emplace_back(xi, p * (v.s - h));
            for (const auto& [b, dd] : v.kinks) g.kinks.emplace_back(xi + b, p * dd);
            value_fn[c] = Pwl{};
        }
        g.normalize();
        const double y = g.argmax(cap);
        out.target[n] = y;
        if (n == 0) {
            out.value = g(y);
            break;
        }
        // W(c) = c + G(max(c, y*)); the node's V(K) = W(l_t K) with t its own stage.
        Pwl w;
        w.a = g(y);
        w.s = 1.0;
        w.kinks.emplace_back(y, g.slope_after(y));
        for (const auto& k : g.kinks) {
            if (k.first > y) w.kinks.push_back(k);
        }
        w.normalize();
        const double l = stage_l(spec, topo.stage(n));
        Pwl& v = value_fn[n];
        v.a = w.a;
        v.s = w.s * l;
        for (const auto& [b, dd] : w.kinks) v.kinks.emplace_back(b / l, dd * l);
    }
    return out;
}

double conditional_quantile(const InventorySpec& spec, const ConditionalGaussian& c, int d, double beta) {
    const double q = c.mean[d] + std::sqrt(c.cov(d, d)) * normal_quantile(beta);
    return spec.demand.lognormal() ? std::exp(q) : q;
}

}  // namespace

double InventorySpec::beta(int t) const {
    const double ht = h.at(t - 1);
    if (!(ht > 1.0)) throw BetaOutOfRange("rapid-order price must exceed 1");
    return (ht - 1.0) / (ht - l.at(t - 1));
}

void InventorySpec::validate() const {
    const auto T = static_cast<std::size_t>(stages());
    if (h.size() != T || l.size() != T || (!s.empty() && s.size() != T)) {
        throw ShapeMismatch("price vectors must have one entry per stage");
    }
    for (double x : h) {
        if (!(x > 1.0)) throw BetaOutOfRange("rapid-order price must exceed 1");
    }
    for (double x : l) {
        if (!(x > 0.0 && x <= 1.0)) throw InvalidParameter("retention factor must lie in (0, 1]");
    }
    if (capacity && *capacity < 0.0) throw Infeasible("capacity must be non-negative");
}

InventorySolution solve_on_tree(const InventorySpec& spec, const ScenarioTree& tree, InventoryMethod method) {
    spec.validate();
    const auto& topo = tree.topology();
    const int T = topo.stage_count();
    const int D = spec.products();
    if (T != spec.stages() || tree.dim() != D) throw ShapeMismatch("tree does not match the inventory spec");
    if (spec.demand.lognormal() && topo.node_count() > 1 && (tree.values().rightCols(topo.node_count() - 1).array() <= 0.0).any()) {
        throw InvalidParameter("lognormal demand trees need positive values");
    }
    const int N = topo.node_count();
    const auto prob = tree.node_probabilities();
    InventorySolution sol;
    sol.method = method;
    sol.order = Eigen::MatrixXd::Zero(D, N);
    sol.inventory = Eigen::MatrixXd::Zero(D, N);
    sol.shortage = Eigen::MatrixXd::Zero(D, N);

    for (int d = 0; d < D; ++d) {
        if (method == InventoryMethod::dynamic_programming) {
            const auto fn = solve_product_dp(spec, tree, d);
            sol.value += fn.value;
            for (NodeId n = 0; n < N; ++n) {
                if (topo.is_leaf(n)) continue;
                const double carried = n == 0 ? 0.0 : stage_l(spec, topo.stage(n)) * sol.inventory(d, n);
                const double y = std::max(carried, fn.target[n]);
                sol.order(d, n) = y - carried;
                for (NodeId c : topo.children(n)) {
                    const double xi = tree.value(c)(d);
                    sol.inventory(d, c) = std::max(y - xi, 0.0);
                    sol.shortage(d, c) = std::max(xi - y, 0.0);
                }
            }
            continue;
        }
        // Dense LP: x per decision node, (K, M) per non-root node.
        std::vector<int> xi_index(N, -1);
        int nx = 0;
        for (NodeId n = 0; n < N; ++n) {
            if (!topo.is_leaf(n)) xi_index[n] = nx++;
        }
        const int nv = nx + 2 * (N - 1);
        auto kvar = [&](NodeId m) { return nx + 2 * (m - 1); };
        auto mvar = [&](NodeId m) { return nx + 2 * (m - 1) + 1; };
        LinearProgram lp;
        lp.c = Eigen::VectorXd::Zero(nv);
        lp.a_eq = Eigen::MatrixXd::Zero(N - 1, nv);
        lp.b_eq = Eigen::VectorXd::Zero(N - 1);
        const int ncap = spec.capacity ? nx : 0;
        lp.a_ub = Eigen::MatrixXd::Zero(ncap, nv);
        lp.b_ub = Eigen::VectorXd::Constant(ncap, spec.capacity ? *spec.capacity : 0.0);
        for (NodeId n = 0; n < N; ++n) {
            if (!topo.is_leaf(n)) {
                lp.c[xi_index[n]] = prob[n];
                if (ncap) {
                    lp.a_ub(xi_index[n], xi_index[n]) = 1.0;
                    if (n > 0) lp.a_ub(xi_index[n], kvar(n)) = stage_l(spec, topo.stage(n));
                }
            }
            if (n == 0) continue;
            const int t = topo.stage(n);
            const NodeId p = topo.parent(n);
            lp.c[mvar(n)] = prob[n] * stage_h(spec, t);
            if (topo.is_leaf(n)) lp.c[kvar(n)] = -prob[n] * stage_l(spec, T);
            const int row = n - 1;
            lp.a_eq(row, xi_index[p]) = 1.0;
            if (p > 0) lp.a_eq(row, kvar(p)) = stage_l(spec, t - 1);
            lp.a_eq(row, kvar(n)) = -1.0;
            lp.a_eq(row, mvar(n)) = 1.0;
            lp.b_eq[row] = tree.value(n)(d);
        }
        const auto res = solve_lp(lp);
        if (res.status != LpStatus::optimal) throw Infeasible("inventory LP has no optimum");
        sol.value -= res.objective;
        sol.duality_gap = std::max(sol.duality_gap, std::abs(res.objective - res.dual_objective));
        for (NodeId n = 0; n < N; ++n) {
            if (!topo.is_leaf(n)) sol.order(d, n) = res.x[xi_index[n]];
            if (n > 0) {
                sol.inventory(d, n) = res.x[kvar(n)];
                sol.shortage(d, n) = res.x[mvar(n)];
            }
        }
    }
    if (!spec.s.empty()) {
        double revenue = 0.0;
        for (NodeId n = 1; n < N; ++n) revenue += prob[n] * spec.s[topo.stage(n) - 1] * tree.value(n).sum();
        sol.profit = sol.value + revenue;
    }
    return sol;
}

double closed_form_value_gaussian(const InventorySpec& spec) {
    spec.validate();
    if (spec.demand.lognormal()) throw InvalidParameter("Gaussian closed form needs Gaussian demand");
    const auto& core = spec.demand.core;
    const int D = core.dim();
    double v = 0.0;
    for (int t = 1; t <= core.stages(); ++t) {
        const double h = spec.h[t - 1];
        const double beta = spec.beta(t);
        const double z = normal_quantile(beta);
        for (int d = 0; d < D; ++d) {
            const double mu = core.mean()[(t - 1) * D + d];
            const double sigma = std::sqrt(core.conditional_cov(t)(d, d));
            v += -h * mu + (h - 1.0) * (mu - sigma * normal_pdf(z) / beta);
        }
    }
    return v;
}

double closed_form_value_lognormal(const InventorySpec& spec) {
    spec.validate();
    const auto& core = spec.demand.core;
    const int D = core.dim();
    double v = 0.0;
    for (int t = 1; t <= core.stages(); ++t) {
        const double h = spec.h[t - 1];
        const double beta = spec.beta(t);
        const double z = normal_quantile(beta);
        for (int d = 0; d < D; ++d) {
            const int i = (t - 1) * D + d;
            const double m = std::exp(core.mean()[i] + 0.5 * core.cov()(i, i));
            const double sigma = std::sqrt(core.conditional_cov(t)(d, d));
            v += -h * m + (h - 1.0) * (1.0 - m * normal_cdf(z - sigma) / beta);
        }
    }
    return v;
}

double lognormal_value_from_avar(const InventorySpec& spec) {
    spec.validate();
    const auto& core = spec.demand.core;
    const int D = core.dim();
    double v = 0.0;
    for (int t = 1; t <= core.stages(); ++t) {
        const double h = spec.h[t - 1];
        const double beta = spec.beta(t);
        const double z = normal_quantile(beta);
        for (int d = 0; d < D; ++d) {
            const int i = (t - 1) * D + d;
            const double m = std::exp(core.mean()[i] + 0.5 * core.cov()(i, i));
            const double sigma = std::sqrt(core.conditional_cov(t)(d, d));
            v += -h * m + (h - 1.0) * m * normal_cdf(z - sigma) / beta;
        }
    }
    return v;
}

Eigen::VectorXd closed_form_policy(const InventorySpec& spec, int t, const Eigen::VectorXd& history,
                                   const Eigen::VectorXd& stock) {
    if (t < 0 || t >= spec.stages()) throw ShapeMismatch("policy stage out of range");
    const int D = spec.products();
    const auto c = spec.demand.conditional(t + 1, history);
    const double beta = spec.beta(t + 1);
    const double l = t == 0 ? 0.0 : spec.l[t - 1];
    Eigen::VectorXd x(D);
    for (int d = 0; d < D; ++d) x[d] = conditional_quantile(spec, c, d, beta) - l * stock[d];
    return x;
}

SimulationSummary simulate_policy(const InventorySpec& spec, const OrderPolicy& policy, const Eigen::MatrixXd& paths) {
    spec.validate();
    const int T = spec.stages();
    const int D = spec.products();
    if (paths.rows() != T * D) throw ShapeMismatch("demand paths have the wrong length");
    SimulationSummary out;
    out.paths = static_cast<int>(paths.cols());
    double sum = 0.0, sq = 0.0;
    for (Eigen::Index k = 0; k < paths.cols(); ++k) {
        Eigen::VectorXd stock = Eigen::VectorXd::Zero(D);
        double total = 0.0;
        for (int t = 1; t <= T; ++t) {
            Eigen::VectorXd x = policy(t - 1, paths.col(k).head((t - 1) * D), stock);
            const double carry = t == 1 ? 0.0 : spec.l[t - 2];
            for (int d = 0; d < D; ++d) {
                if (x[d] < 0.0) {
                    x[d] = 0.0;
                    ++out.clamped;
                }
                if (spec.capacity) x[d] = std::min(x[d], std::max(0.0, *spec.capacity - carry * stock[d]));
                const double level = carry * stock[d] + x[d];
                const double xi = paths(static_cast<Eigen::Index>((t - 1) * D + d), k);
                stock[d] = std::max(level - xi, 0.0);
                total -= x[d] + spec.h[t - 1] * std::max(xi - level, 0.0);
            }
        }
        total += spec.l[T - 1] * stock.sum();
        sum += total;
        sq += total * total;
    }
    const double n = static_cast<double>(out.paths);
    out.mean = sum / n;
    out.std_error = out.paths > 1 ? std::sqrt(std::max(0.0, (sq - n * out.mean * out.mean) / (n - 1.0)) / n) : 0.0;
    return out;
}

SimulationSummary simulate_policy(const InventorySpec& spec, const OrderPolicy& policy, int paths, std::uint64_t seed) {
    Rng rng = make_rng(seed, kSimulationStream);
    Eigen::MatrixXd sample(spec.stages() * spec.products(), paths);
    for (int k = 0; k < paths; ++k) sample.col(k) = spec.demand.sample_path(rng);
    return simulate_policy(spec, policy, sample);
}

InventorySpec random_inventory_spec(int stages, Rng& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Eigen::MatrixXd cov = Eigen::MatrixXd::Constant(stages, stages, 0.0);
    for (int s = 0; s < stages; ++s) {
        cov(s, s) = 100.0;
        for (int t = s + 1; t < stages; ++t) cov(s, t) = cov(t, s) = 10.0 * u(rng);
    }
    if (Eigen::LLT<Eigen::MatrixXd>(cov).info() != Eigen::Success) cov = clip_to_psd(cov, 1e-6);
    InventorySpec spec{{}, {}, {}, std::nullopt,
                       {ModelKind::gaussian, GaussianProcessModel(1, stages, Eigen::VectorXd::Constant(stages, 100.0), cov)}};
    // 1 - U lies in (0, 1], keeping l_t > 0 and h_t > 1.
    for (int t = 0; t < stages; ++t) spec.l.push_back(0.1 * (1.0 - u(rng)));
    for (int t = 0; t < stages; ++t) spec.h.push_back(1.0 + (1.0 - u(rng)));
    return spec;
}

}  // namespace scentree
