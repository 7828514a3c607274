#include "scentree/nested_distance.hpp"

#include "scentree/errors.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace scentree {

namespace {

double power(double d, double r) { return r == 1.0 ? d : std::pow(d, r); }

double root(double v, double r) { return r == 1.0 ? v : std::pow(std::max(v, 0.0), 1.0 / r); }

void check_compatible(const ScenarioTree& a, const ScenarioTree& b) {
    if (a.stage_count() != b.stage_count()) {
        throw ShapeMismatch("trees have different stage counts");
    }
    if (a.dim() != b.dim()) {
        throw ShapeMismatch("trees have different dimensions");
    }
}

void check_order(double r) {
    if (!(r >= 1.0)) {
        throw Error("distance order must be >= 1");
    }
}

std::vector<double> child_probs(const ScenarioTree& t, NodeId n) {
    std::vector<double> w;
    for (const NodeId c : t.topology().children(n)) {
        w.push_back(t.cond_prob(c));
    }
    return w;
}

/// Optimal value; skips the solver when one side is a single atom.
double transport_value(const Eigen::MatrixXd& cost, const std::vector<double>& wa, const std::vector<double>& wb) {
    if (wa.size() == 1) {
        double s = 0.0;
        for (std::size_t j = 0; j < wb.size(); ++j) s += wb[j] * cost(0, static_cast<Eigen::Index>(j));
        return s;
    }
    if (wb.size() == 1) {
        double s = 0.0;
        for (std::size_t i = 0; i < wa.size(); ++i) s += wa[i] * cost(static_cast<Eigen::Index>(i), 0);
        return s;
    }
    return solve_transport(cost, wa, wb).objective;
}

Eigen::MatrixXd child_cost(const ScenarioTree& a, NodeId i, const ScenarioTree& b, NodeId j, double r) {
    const auto ca = a.topology().children(i);
    const auto cb = b.topology().children(j);
    Eigen::MatrixXd cost(ca.size(), cb.size());
    for (std::size_t k = 0; k < ca.size(); ++k) {
        for (std::size_t l = 0; l < cb.size(); ++l) {
            cost(k, l) = power((a.value(ca[k]) - b.value(cb[l])).norm(), r);
        }
    }
    return cost;
}

/// r-th power of the nested distance between the subtrees at i and j, cut
/// `depth` stages below them.
double local_power(const ScenarioTree& a, NodeId i, const ScenarioTree& b, NodeId j, int depth, double r) {
    if (depth == 0) {
        return 0.0;
    }
    Eigen::MatrixXd cost = child_cost(a, i, b, j, r);
    if (depth > 1) {
        const auto ca = a.topology().children(i);
        const auto cb = b.topology().children(j);
        for (std::size_t k = 0; k < ca.size(); ++k) {
            for (std::size_t l = 0; l < cb.size(); ++l) {
                cost(k, l) += local_power(a, ca[k], b, cb[l], depth - 1, r);
            }
        }
    }
    return transport_value(cost, child_probs(a, i), child_probs(b, j));
}

/// Largest local_power over all node pairs at `stage`.
double sup_local_power(const ScenarioTree& a, const ScenarioTree& b, int stage, int depth, double r) {
    double best = 0.0;
    const auto& ta = a.topology();
    const auto& tb = b.topology();
    for (int i = 0; i < ta.count_at_stage(stage); ++i) {
        for (int j = 0; j < tb.count_at_stage(stage); ++j) {
            best = std::max(best, local_power(a, ta.first_at_stage(stage) + i, b, tb.first_at_stage(stage) + j, depth, r));
        }
    }
    return best;
}

// Path cost with the stage blocks of size `block`: sum of block norms^r.
double block_cost(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Eigen::VectorXd>& y, int block,
                  double r) {
    double s = 0.0;
    for (Eigen::Index k = 0; k < x.size(); k += block) {
        s += power((x.segment(k, block) - y.segment(k, block)).norm(), r);
    }
    return s;
}

/// Transport between `samples` (uniform weights, one per column) and `q`.
double empirical_kw(const Eigen::MatrixXd& samples, const DiscreteDistribution& q, int block, double r) {
    const Eigen::Index n = samples.cols();
    Eigen::MatrixXd cost(q.size(), n);
    for (int k = 0; k < q.size(); ++k) {
        for (Eigen::Index i = 0; i < n; ++i) {
            cost(k, i) = block_cost(q.atoms.col(k), samples.col(i), block, r);
        }
    }
    // Far-off histories under a near-singular lognormal model push the sample
    // past the double range; the distance is then unbounded.
    if (!cost.allFinite()) {
        return std::numeric_limits<double>::infinity();
    }
    const std::vector<double> uniform(static_cast<std::size_t>(n), 1.0 / static_cast<double>(n));
    return root(transport_value(cost, q.weights, uniform), r);
}

double conditional_kw_blocks(const ProcessModel& model, const ConditionalGaussian& c, const DiscreteDistribution& q,
                             double r, const Eigen::MatrixXd& base) {
    if (c.mean.size() == 1 && (r == 1.0 || r == 2.0)) {
        return scalar_kw(model.kind, c.mean[0], std::sqrt(c.cov(0, 0)), {q.atoms.data(), static_cast<std::size_t>(q.size())},
                         q.weights, r);
    }
    if (base.rows() != c.mean.size()) {
        throw ShapeMismatch("base sample dimension does not match the conditional");
    }
    Eigen::LLT<Eigen::MatrixXd> llt(c.cov);
    if (llt.info() != Eigen::Success) {
        throw SingularSubCovariance("conditional covariance is not positive definite");
    }
    Eigen::MatrixXd samples = (llt.matrixL() * base).colwise() + c.mean;
    if (model.lognormal()) {
        samples = samples.array().exp().matrix();
    }
    return empirical_kw(samples, q, model.dim(), r);
}

Eigen::MatrixXd standard_normals(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    std::normal_distribution<double> normal;
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j) {
        for (Eigen::Index i = 0; i < rows; ++i) {
            m(i, j) = normal(rng);
        }
    }
    return m;
}

/// Histories (stages 1..t-1) for the supremum search: every stage-(t-1) node
/// of the tree, then sampled model histories paired with their nearest node.
struct HistoryProbe {
    Eigen::VectorXd history;
    NodeId node;
};

std::vector<HistoryProbe> history_probes(const ScenarioTree& tree, int t, const Eigen::MatrixXd& sampled_paths) {
    const auto& topo = tree.topology();
    const int first = topo.first_at_stage(t - 1);
    const int count = topo.count_at_stage(t - 1);
    std::vector<HistoryProbe> probes;
    std::vector<Eigen::VectorXd> node_hist;
    for (int k = 0; k < count; ++k) {
        node_hist.push_back(tree.history(first + k));
        probes.push_back({node_hist.back(), first + k});
    }
    if (t == 1) {
        return probes;
    }
    const Eigen::Index h = static_cast<Eigen::Index>(t - 1) * tree.dim();
    for (Eigen::Index s = 0; s < sampled_paths.cols(); ++s) {
        const Eigen::VectorXd hist = sampled_paths.col(s).head(h);
        int best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (int k = 0; k < count; ++k) {
            const double d = (node_hist[k] - hist).squaredNorm();
            if (d < best_d) {
                best_d = d;
                best = k;
            }
        }
        probes.push_back({hist, first + best});
    }
    return probes;
}

Eigen::MatrixXd sample_paths(const ProcessModel& model, int count, std::uint64_t seed) {
    Rng rng = make_rng(seed, 0x68697374ULL);
    Eigen::MatrixXd paths(model.dim() * model.stages(), count);
    for (int s = 0; s < count; ++s) {
        paths.col(s) = model.sample_path(rng);
    }
    return paths;
}

DiscreteDistribution children_distribution(const ScenarioTree& tree, NodeId n) {
    const auto kids = tree.topology().children(n);
    DiscreteDistribution q;
    q.atoms.resize(tree.dim(), static_cast<Eigen::Index>(kids.size()));
    for (std::size_t k = 0; k < kids.size(); ++k) {
        q.atoms.col(static_cast<Eigen::Index>(k)) = tree.value(kids[k]);
        q.weights.push_back(tree.cond_prob(kids[k]));
    }
    return q;
}

/// Paths over stages t..T below a stage-(t-1) node with their conditional weights.
DiscreteDistribution tail_distribution(const ScenarioTree& tree, NodeId n) {
    const auto& topo = tree.topology();
    const int t = topo.stage(n) + 1;
    const int T = tree.stage_count();
    const int d = tree.dim();
    const auto [lo, hi] = topo.scenario_range(n);
    DiscreteDistribution q;
    q.atoms.resize(static_cast<Eigen::Index>(T - t + 1) * d, hi - lo);
    for (int s = lo; s < hi; ++s) {
        double w = 1.0;
        for (int u = T; u >= t; --u) {
            const NodeId m = topo.predecessor(u, s);
            q.atoms.col(s - lo).segment(static_cast<Eigen::Index>(u - t) * d, d) = tree.value(m);
            w *= tree.cond_prob(m);
        }
        q.weights.push_back(w);
    }
    return q;
}

}  // namespace

NestedDistanceResult nested_distance(const ScenarioTree& a, const ScenarioTree& b, double r, bool compose_plan) {
    check_compatible(a, b);
    check_order(r);
    const auto& ta = a.topology();
    const auto& tb = b.topology();
    const int T = a.stage_count();
    NestedDistanceResult out;
    out.tables.resize(T + 1);
    out.tables[T] = Eigen::MatrixXd::Zero(ta.count_at_stage(T), tb.count_at_stage(T));
    for (int t = T - 1; t >= 0; --t) {
        const int fa = ta.first_at_stage(t);
        const int fb = tb.first_at_stage(t);
        const int na = ta.first_at_stage(t + 1);
        const int nb = tb.first_at_stage(t + 1);
        const Eigen::MatrixXd& next = out.tables[t + 1];
        Eigen::MatrixXd& table = out.tables[t];
        table.resize(ta.count_at_stage(t), tb.count_at_stage(t));
        for (int i = 0; i < table.rows(); ++i) {
            const auto ca = ta.children(fa + i);
            const auto wa = child_probs(a, fa + i);
            for (int j = 0; j < table.cols(); ++j) {
                const auto cb = tb.children(fb + j);
                Eigen::MatrixXd cost = child_cost(a, fa + i, b, fb + j, r);
                for (std::size_t k = 0; k < ca.size(); ++k) {
                    for (std::size_t l = 0; l < cb.size(); ++l) {
                        cost(k, l) += next(ca[k] - na, cb[l] - nb);
                    }
                }
                table(i, j) = transport_value(cost, wa, child_probs(b, fb + j));
            }
        }
    }
    out.value = root(out.tables[0](0, 0), r);

    if (compose_plan) {
        Eigen::MatrixXd mass = Eigen::MatrixXd::Ones(1, 1);
        for (int t = 0; t < T; ++t) {
            const int fa = ta.first_at_stage(t);
            const int fb = tb.first_at_stage(t);
            const int na = ta.first_at_stage(t + 1);
            const int nb = tb.first_at_stage(t + 1);
            Eigen::MatrixXd next_mass = Eigen::MatrixXd::Zero(ta.count_at_stage(t + 1), tb.count_at_stage(t + 1));
            for (int i = 0; i < mass.rows(); ++i) {
                for (int j = 0; j < mass.cols(); ++j) {
                    if (mass(i, j) <= 0.0) continue;
                    const auto ca = ta.children(fa + i);
                    const auto cb = tb.children(fb + j);
                    Eigen::MatrixXd cost = child_cost(a, fa + i, b, fb + j, r);
                    for (std::size_t k = 0; k < ca.size(); ++k) {
                        for (std::size_t l = 0; l < cb.size(); ++l) {
                            cost(k, l) += out.tables[t + 1](ca[k] - na, cb[l] - nb);
                        }
                    }
                    const auto plan = solve_transport(cost, child_probs(a, fa + i), child_probs(b, fb + j)).plan.flow;
                    for (std::size_t k = 0; k < ca.size(); ++k) {
                        for (std::size_t l = 0; l < cb.size(); ++l) {
                            next_mass(ca[k] - na, cb[l] - nb) += mass(i, j) * plan(k, l);
                        }
                    }
                }
            }
            mass = std::move(next_mass);
        }
        out.plan = std::move(mass);
    }
    return out;
}

double path_kw_distance(const ScenarioTree& a, const ScenarioTree& b, double r) {
    check_compatible(a, b);
    check_order(r);
    const ScenarioMatrix sa = a.scenario_matrix();
    const ScenarioMatrix sb = b.scenario_matrix();
    Eigen::MatrixXd cost(sa.scenarios(), sb.scenarios());
    for (int i = 0; i < sa.scenarios(); ++i) {
        for (int j = 0; j < sb.scenarios(); ++j) {
            double c = 0.0;
            for (int t = 1; t <= a.stage_count(); ++t) {
                c += power((sa.at(i, t) - sb.at(j, t)).norm(), r);
            }
            cost(i, j) = c;
        }
    }
    return root(transport_value(cost, leaf_probabilities(a), leaf_probabilities(b)), r);
}

std::vector<double> lower_bound_chain(const ScenarioTree& a, const ScenarioTree& b, double r) {
    check_compatible(a, b);
    std::vector<double> chain;
    for (int t = 1; t <= a.stage_count(); ++t) {
        chain.push_back(nested_distance(make_clairvoyant(a, t), make_clairvoyant(b, t), r).value);
    }
    return chain;
}

double upper_bound_stagewise(const ScenarioTree& a, const ScenarioTree& b, double r) {
    check_compatible(a, b);
    check_order(r);
    double total = 0.0;
    for (int t = 1; t <= a.stage_count(); ++t) {
        total += sup_local_power(a, b, t - 1, 1, r);
    }
    return root(total, r);
}

double upper_bound_two_stage(const ScenarioTree& a, const ScenarioTree& b, double r) {
    check_compatible(a, b);
    check_order(r);
    const int T = a.stage_count();
    double total = 0.0;
    for (int j = 2; j <= T; j += 2) {
        total += sup_local_power(a, b, j - 2, 2, r);
    }
    if (T % 2 == 1) {
        total += sup_local_power(a, b, T - 1, 1, r);
    }
    return root(total, r);
}

double scalar_kw(ModelKind kind, double mu, double sigma, std::span<const double> atoms,
                 std::span<const double> weights, double r) {
    if (r != 1.0 && r != 2.0) {
        throw Error("exact scalar distance supports r = 1 and r = 2 only");
    }
    if (!(sigma > 0.0)) {
        throw DegenerateInput("scalar distribution needs positive scale");
    }
    std::vector<int> order(atoms.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int x, int y) { return atoms[x] < atoms[y]; });
    const bool gauss = kind == ModelKind::gaussian;
    const double inf = std::numeric_limits<double>::infinity();
    const double m1 = std::exp(mu + 0.5 * sigma * sigma);
    const double m2 = std::exp(2.0 * mu + 2.0 * sigma * sigma);
    auto Phi = [&](double z) { return normal_cdf(z); };
    auto phi = [&](double z) { return std::isinf(z) ? 0.0 : normal_pdf(z); };
    auto zphi = [&](double z) { return std::isinf(z) ? 0.0 : z * normal_pdf(z); };
    // Signed integral of (Q(z) - x) phi(z) over [lo, hi], Q the quantile map in z.
    auto first = [&](double lo, double hi, double x) {
        if (hi <= lo) return 0.0;
        if (gauss) return (mu - x) * (Phi(hi) - Phi(lo)) + sigma * (phi(lo) - phi(hi));
        return m1 * (Phi(hi - sigma) - Phi(lo - sigma)) - x * (Phi(hi) - Phi(lo));
    };
    auto second = [&](double lo, double hi, double x) {
        if (hi <= lo) return 0.0;
        const double dP = Phi(hi) - Phi(lo);
        if (gauss) {
            const double d = mu - x;
            return d * d * dP + 2.0 * d * sigma * (phi(lo) - phi(hi)) + sigma * sigma * (dP + zphi(lo) - zphi(hi));
        }
        return m2 * (Phi(hi - 2.0 * sigma) - Phi(lo - 2.0 * sigma)) -
               2.0 * x * m1 * (Phi(hi - sigma) - Phi(lo - sigma)) + x * x * dP;
    };
    double total_weight = 0.0;
    for (const double w : weights) total_weight += w;
    double cum = 0.0;
    double lo = -inf;
    double total = 0.0;
    for (std::size_t k = 0; k < order.size(); ++k) {
        const double w = weights[order[k]];
        if (w <= 0.0) continue;
        cum += w / total_weight;
        const bool last = k + 1 == order.size() || cum >= 1.0 - 1e-15;
        const double hi = last ? inf : normal_quantile(cum);
        const double x = atoms[order[k]];
        if (r == 1.0) {
            double z0;
            if (gauss) {
                z0 = (x - mu) / sigma;
            } else {
                z0 = x > 0.0 ? (std::log(x) - mu) / sigma : -inf;
            }
            const double split = std::clamp(z0, lo, hi);
            total += first(split, hi, x) - first(lo, split, x);
        } else {
            total += second(lo, hi, x);
        }
        lo = hi;
        if (last) break;
    }
    return r == 1.0 ? total : std::sqrt(std::max(total, 0.0));
}

double continuous_kw(const ProcessModel& model, const ConditionalGaussian& c, const DiscreteDistribution& q, double r,
                     const Eigen::MatrixXd& base) {
    if (q.dim() != c.mean.size()) {
        throw ShapeMismatch("discrete distribution dimension does not match the conditional");
    }
    return conditional_kw_blocks(model, c, q, r, base);
}

double upper_bound_lipschitz(const ProcessModel& model, const ScenarioTree& tree, const BoundConfig& config,
                             std::vector<double>* stage_terms) {
    const int T = tree.stage_count();
    if (model.stages() != T || model.dim() != tree.dim()) {
        throw ShapeMismatch("model and tree shapes differ");
    }
    const std::vector<double> k = model.lipschitz_constants();
    if (static_cast<int>(k.size()) != T - 1) {
        throw UnknownLipschitz("model does not provide Lipschitz constants for every stage");
    }
    const Eigen::MatrixXd paths = sample_paths(model, config.sampled_histories, config.seed);
    std::vector<double> terms;
    double total = 0.0;
    for (int t = 1; t <= T; ++t) {
        Rng rng = make_rng(config.seed, static_cast<std::uint64_t>(t));
        const Eigen::MatrixXd base = model.dim() == 1 ? Eigen::MatrixXd() : standard_normals(model.dim(), config.kw_samples, rng);
        double sup = 0.0;
        std::vector<DiscreteDistribution> cache(tree.node_count());
        for (const auto& probe : history_probes(tree, t, paths)) {
            if (cache[probe.node].size() == 0) {
                cache[probe.node] = children_distribution(tree, probe.node);
            }
            const auto c = model.conditional(t, probe.history);
            sup = std::max(sup, conditional_kw_blocks(model, c, cache[probe.node], config.r, base));
        }
        double factor = 1.0;
        for (int s = t + 1; s <= T; ++s) {
            factor *= k[s - 2] + 1.0;
        }
        terms.push_back(sup * factor);
        total += sup * factor;
    }
    if (stage_terms) {
        *stage_terms = std::move(terms);
    }
    return total;
}

double upper_bound_joint_clairvoyant(const ProcessModel& model, const ScenarioTree& tree, const BoundConfig& config,
                                     bool amplified, std::vector<double>* stage_terms) {
    const int T = tree.stage_count();
    if (model.stages() != T || model.dim() != tree.dim()) {
        throw ShapeMismatch("model and tree shapes differ");
    }
    const Eigen::MatrixXd paths = sample_paths(model, config.sampled_histories, config.seed);
    std::vector<double> terms;
    double total = 0.0;
    for (int t = 1; t <= T; ++t) {
        const int rows = (T - t + 1) * model.dim();
        Rng rng = make_rng(config.seed, 1000 + static_cast<std::uint64_t>(t));
        const Eigen::MatrixXd base = rows == 1 ? Eigen::MatrixXd() : standard_normals(rows, config.kw_samples, rng);
        double sup = 0.0;
        std::vector<DiscreteDistribution> cache(tree.node_count());
        for (const auto& probe : history_probes(tree, t, paths)) {
            if (cache[probe.node].size() == 0) {
                cache[probe.node] = tail_distribution(tree, probe.node);
            }
            const auto c = model.joint_tail_conditional(t, probe.history);
            sup = std::max(sup, conditional_kw_blocks(model, c, cache[probe.node], config.r, base));
        }
        double factor = 1.0;
        if (amplified) {
            for (int s = t + 1; s <= T; ++s) {
                factor *= model.core.joint_lipschitz_constant(s) + 1.0;
            }
        }
        terms.push_back(sup * factor);
        total += sup * factor;
    }
    if (stage_terms) {
        *stage_terms = std::move(terms);
    }
    return total;
}

BoundReport bound_report(const ScenarioTree& a, const ScenarioTree& b, double r) {
    BoundReport rep;
    rep.lower_chain = lower_bound_chain(a, b, r);
    rep.upper["nested"] = rep.lower_chain.back();
    rep.upper["eq6"] = upper_bound_stagewise(a, b, r);
    rep.upper[a.stage_count() % 2 == 0 ? "eq10" : "eq11"] = upper_bound_two_stage(a, b, r);
    rep.kw_estimator = "exact";
    return rep;
}

BoundReport bound_report(const ProcessModel& model, const ScenarioTree& tree, const BoundConfig& config) {
    BoundReport rep;
    rep.lipschitz = model.lipschitz_constants();
    rep.sampled_histories = config.sampled_histories;
    rep.kw_samples = config.kw_samples;
    rep.seed = config.seed;
    rep.kw_estimator = model.dim() == 1 ? "exact-scalar/empirical-joint" : "empirical";
    std::vector<double> terms;
    rep.upper["eq7"] = upper_bound_lipschitz(model, tree, config, &terms);
    rep.stage_terms["eq7"] = terms;
    rep.upper["eq12"] = upper_bound_joint_clairvoyant(model, tree, config, false, &terms);
    rep.stage_terms["eq12"] = terms;
    rep.upper["eq14"] = upper_bound_joint_clairvoyant(model, tree, config, true, &terms);
    rep.stage_terms["eq14"] = terms;
    return rep;
}

}  // namespace scentree
