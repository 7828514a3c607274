#include "scentree/quantize.hpp"

#include "scentree/errors.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

namespace scentree {

namespace {

constexpr std::uint64_t kMonteCarloStream = 0x4d430000;
constexpr std::uint64_t kStagewiseStream = 0x53570000;
constexpr std::uint64_t kFbStream = 0x46420000;
constexpr std::uint64_t kProbStream = 0x50520000;
constexpr std::uint64_t kObjectiveStream = 0x4f424a;

Eigen::VectorXd standard_normals(Eigen::Index n, Rng& rng) {
    std::normal_distribution<double> normal;
    Eigen::VectorXd e(n);
    for (Eigen::Index i = 0; i < n; ++i) e[i] = normal(rng);
    return e;
}

/// Nodes at stage s below node v, as a half-open range.
std::pair<NodeId, NodeId> descendants(const TreeTopology& topo, NodeId v, int s) {
    if (s == topo.stage(v)) return {v, v + 1};
    const auto [lo, hi] = topo.scenario_range(v);
    return {topo.predecessor(s, lo), topo.predecessor(s, hi - 1) + 1};
}

/// Stacked values of stages 1..stage(n) on the path to n, read from a D x N matrix.
Eigen::VectorXd path_history(const TreeTopology& topo, const Eigen::MatrixXd& values, NodeId n) {
    const int dim = static_cast<int>(values.rows());
    const int s = topo.stage(n);
    Eigen::VectorXd h(s * dim);
    for (NodeId u = n; topo.stage(u) > 0; u = topo.parent(u)) {
        h.segment((topo.stage(u) - 1) * dim, dim) = values.col(u);
    }
    return h;
}

void exp_transform(const TreeTopology& topo, Eigen::MatrixXd& values) {
    for (NodeId n = topo.first_at_stage(1); n < topo.node_count(); ++n) values.col(n) = values.col(n).array().exp();
}

double path_cost(const Eigen::Ref<const Eigen::VectorXd>& diff, double r) {
    const double d = diff.norm();
    return r == 1.0 ? d : r == 2.0 ? diff.squaredNorm() : std::pow(d, r);
}

double cell_mass(double a, double b) {
    // Upper cells are measured through the complementary tail for accuracy.
    return a > 0.0 ? normal_cdf(-a) - normal_cdf(-b) : normal_cdf(b) - normal_cdf(a);
}

double phi_times(double x) { return std::isinf(x) ? 0.0 : x * normal_pdf(x); }

/// Expected |X - y|^r over the cell (a, b] for standard normal X.
double cell_distortion(double a, double b, double y, double r) {
    const double fa = normal_pdf(a), fb = normal_pdf(b);
    if (r == 2.0) {
        const double mass = cell_mass(a, b);
        const double first = fa - fb;
        const double second = mass - (phi_times(b) - phi_times(a));
        return second - 2.0 * y * first + y * y * mass;
    }
    const double fy = normal_pdf(y);
    const double below = y * cell_mass(a, y) - (fa - fy);
    const double above = (fy - fb) - y * cell_mass(y, b);
    return below + above;
}

double cell_center(double a, double b, double r) {
    if (r == 2.0) {
        const double mass = cell_mass(a, b);
        return mass > 0.0 ? (normal_pdf(a) - normal_pdf(b)) / mass : 0.5 * (a + b);
    }
    if (a > 0.0) return -normal_quantile(0.5 * (normal_cdf(-a) + normal_cdf(-b)));
    return normal_quantile(0.5 * (normal_cdf(a) + normal_cdf(b)));
}

/// Sample-based Lloyd (r = 2) or Weiszfeld k-medians (r = 1) in D dimensions.
void sample_lloyd(const Eigen::MatrixXd& sample, int b, double r, int max_sweeps, Eigen::MatrixXd& centers,
                  std::vector<double>& probs) {
    const Eigen::Index dim = sample.rows();
    const Eigen::Index n = sample.cols();
    centers = sample.leftCols(b);
    std::vector<int> assign(n, -1);
    std::vector<long> counts(b);
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        bool changed = false;
        for (Eigen::Index k = 0; k < n; ++k) {
            int best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (int i = 0; i < b; ++i) {
                const double d = (centers.col(i) - sample.col(k)).squaredNorm();
                if (d < best_d) best_d = d, best = i;
            }
            if (assign[k] != best) assign[k] = best, changed = true;
        }
        std::fill(counts.begin(), counts.end(), 0);
        for (int a : assign) ++counts[a];
        for (int i = 0; i < b; ++i) {
            if (counts[i] > 0) continue;
            // Empty cell: move the center to the sample farthest from its own center.
            Eigen::Index far = 0;
            double far_d = -1.0;
            for (Eigen::Index k = 0; k < n; ++k) {
                const double d = (centers.col(assign[k]) - sample.col(k)).squaredNorm();
                if (counts[assign[k]] > 1 && d > far_d) far_d = d, far = k;
            }
            --counts[assign[far]];
            assign[far] = i;
            counts[i] = 1;
            centers.col(i) = sample.col(far);
            changed = true;
        }
        Eigen::MatrixXd next = Eigen::MatrixXd::Zero(dim, b);
        if (r == 2.0) {
            for (Eigen::Index k = 0; k < n; ++k) next.col(assign[k]) += sample.col(k);
            for (int i = 0; i < b; ++i) next.col(i) /= static_cast<double>(counts[i]);
        } else {
            next = centers;
            for (int it = 0; it < 20; ++it) {
                Eigen::MatrixXd num = Eigen::MatrixXd::Zero(dim, b);
                Eigen::VectorXd den = Eigen::VectorXd::Zero(b);
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double d = std::max((next.col(assign[k]) - sample.col(k)).norm(), 1e-12);
                    num.col(assign[k]) += sample.col(k) / d;
                    den[assign[k]] += 1.0 / d;
                }
                for (int i = 0; i < b; ++i) next.col(i) = num.col(i) / den[i];
            }
        }
        centers = next;
        if (!changed) break;
    }
    probs.assign(b, 0.0);
    for (int a : assign) probs[a] += 1.0;
    for (auto& p : probs) p /= static_cast<double>(n);
}

/// Stage-wise quantizer of N(0, cov), keyed by stage and child count.
struct StageQuantizer {
    Eigen::MatrixXd points;
    std::vector<double> probs;
};

StageQuantizer quantize_centered(const Eigen::MatrixXd& factor, int b, const QuantizeConfig& config, int stage) {
    StageQuantizer q;
    const Eigen::Index dim = factor.rows();
    if (dim == 1) {
        const auto s = standard_normal_quantizer(b, config.r, config.lloyd_tolerance, config.lloyd_max_sweeps);
        q.points.resize(1, b);
        for (int i = 0; i < b; ++i) q.points(0, i) = factor(0, 0) * s.points[i];
        q.probs = s.probabilities;
        return q;
    }
    if (b == 1) {
        // The mean is optimal for r = 2 and the spatial median of a centered Gaussian is 0.
        q.points = Eigen::MatrixXd::Zero(dim, 1);
        q.probs = {1.0};
        return q;
    }
    Rng rng = make_rng(config.seed, kStagewiseStream + static_cast<std::uint64_t>(stage) * 1000 + b);
    const int n = std::max(config.stagewise_samples, 10 * b);
    Eigen::MatrixXd sample(dim, n);
    for (int k = 0; k < n; ++k) sample.col(k) = factor * standard_normals(dim, rng);
    sample_lloyd(sample, b, config.r, 500, q.points, q.probs);
    return q;
}

double step_factor(const QuantizeConfig& config, int k, double grad_sq) {
    switch (config.step_rule) {
    case StepRule::diminishing:
        return std::pow(static_cast<double>(k), -config.step_exponent);
    case StepRule::square_summable:
        return 1.0 / k;
    case StepRule::polyak: {
        if (grad_sq <= 0.0) return 0.0;
        // t_k = 1 / (k ||g||^2); the r = 2 update carries the gradient's factor 2.
        const double t = 1.0 / (k * grad_sq);
        return std::min(1.0, config.r == 2.0 ? 2.0 * t : t);
    }
    }
    return 0.0;
}

}  // namespace

StepRule step_rule_from_string(const std::string& name) {
    if (name == "diminishing") return StepRule::diminishing;
    if (name == "square-summable" || name == "square_summable") return StepRule::square_summable;
    if (name == "polyak") return StepRule::polyak;
    throw ShapeMismatch("unknown step rule '" + name + "'");
}

FbVariant variant_from_string(const std::string& name) {
    if (name == "full") return FbVariant::full;
    if (name == "two-stage" || name == "two_stage" || name == "efficient_two_stage") return FbVariant::two_stage;
    throw ShapeMismatch("unknown variant '" + name + "'");
}

std::string FbTrace::to_csv() const {
    std::ostringstream out;
    out.precision(17);
    out << "stage,iteration,objective,skips\n";
    for (const auto& r : records) out << r.stage << ',' << r.iteration << ',' << r.objective << ',' << r.skips << '\n';
    return out.str();
}

ScenarioTree monte_carlo_tree(const ProcessModel& model, const TreeTopology& topology, std::uint64_t seed) {
    if (topology.stage_count() != model.stages()) throw ShapeMismatch("topology and model stage counts differ");
    const int dim = model.dim();
    Eigen::MatrixXd values = Eigen::MatrixXd::Zero(dim, topology.node_count());
    std::vector<double> probs(topology.node_count(), 1.0);
    for (NodeId n = 0; n < topology.node_count(); ++n) {
        if (topology.is_leaf(n)) continue;
        const int t = topology.stage(n) + 1;
        const auto c = model.core.conditional(t, path_history(topology, values, n));
        const auto& factor = model.core.conditional_factor(t);
        Rng rng = make_rng(seed, kMonteCarloStream + n);
        const auto kids = topology.children(n);
        for (NodeId child : kids) {
            values.col(child) = c.mean + factor * standard_normals(dim, rng);
            probs[child] = 1.0 / static_cast<double>(kids.size());
        }
    }
    if (model.lognormal()) exp_transform(topology, values);
    return ScenarioTree(topology, std::move(values), std::move(probs));
}

ScalarQuantizer standard_normal_quantizer(int points, double r, double tolerance, int max_sweeps) {
    if (points < 1) throw DegenerateInput("quantizer needs at least one point");
    if (r != 1.0 && r != 2.0) throw ShapeMismatch("scalar quantizer supports r = 1 and r = 2");
    ScalarQuantizer q;
    q.points.resize(points);
    for (int i = 0; i < points; ++i) q.points[i] = normal_quantile((2.0 * i + 1.0) / (2.0 * points));
    const double inf = std::numeric_limits<double>::infinity();
    auto edges = [&](int i) {
        const double a = i == 0 ? -inf : 0.5 * (q.points[i - 1] + q.points[i]);
        const double b = i + 1 == points ? inf : 0.5 * (q.points[i] + q.points[i + 1]);
        return std::pair{a, b};
    };
    auto distortion = [&] {
        double s = 0.0;
        for (int i = 0; i < points; ++i) {
            const auto [a, b] = edges(i);
            s += cell_distortion(a, b, q.points[i], r);
        }
        return s;
    };
    double previous = distortion();
    int rising = 0;
    for (q.sweeps = 0; q.sweeps < max_sweeps;) {
        std::vector<double> next(points);
        for (int i = 0; i < points; ++i) {
            const auto [a, b] = edges(i);
            next[i] = cell_center(a, b, r);
        }
        double moved = 0.0;
        for (int i = 0; i < points; ++i) moved = std::max(moved, std::abs(next[i] - q.points[i]));
        q.points = next;
        ++q.sweeps;
        const double d = distortion();
        rising = d > previous + 1e-12 * (1.0 + std::abs(previous)) ? rising + 1 : 0;
        if (rising >= 3) throw QuantizerDiverged("Lloyd distortion increased for 3 consecutive sweeps");
        previous = d;
        if (moved < tolerance) break;
    }
    q.probabilities.resize(points);
    for (int i = 0; i < points; ++i) {
        const auto [a, b] = edges(i);
        q.probabilities[i] = cell_mass(a, b);
    }
    return q;
}

ScenarioTree stagewise_optimal_tree(const ProcessModel& model, const TreeTopology& topology,
                                    const QuantizeConfig& config) {
    if (topology.stage_count() != model.stages()) throw ShapeMismatch("topology and model stage counts differ");
    Eigen::MatrixXd values = Eigen::MatrixXd::Zero(model.dim(), topology.node_count());
    std::vector<double> probs(topology.node_count(), 1.0);
    std::map<std::pair<int, int>, StageQuantizer> cache;
    for (NodeId n = 0; n < topology.node_count(); ++n) {
        if (topology.is_leaf(n)) continue;
        const int t = topology.stage(n) + 1;
        const auto kids = topology.children(n);
        const int b = static_cast<int>(kids.size());
        auto it = cache.find({t, b});
        if (it == cache.end()) {
            it = cache.emplace(std::pair{t, b}, quantize_centered(model.core.conditional_factor(t), b, config, t)).first;
        }
        const auto mean = model.core.conditional(t, path_history(topology, values, n)).mean;
        for (int i = 0; i < b; ++i) {
            values.col(kids[i]) = mean + it->second.points.col(i);
            probs[kids[i]] = it->second.probs[i];
        }
    }
    if (model.lognormal()) exp_transform(topology, values);
    return ScenarioTree(topology, std::move(values), std::move(probs));
}

Eigen::VectorXd r2_update(const Eigen::VectorXd& z, const Eigen::VectorXd& sample, int n, double step) {
    return z - (step / n) * (z - sample);
}

bool r1_update_variant(Eigen::VectorXd& z, const Eigen::VectorXd& sample, int n, double step) {
    const Eigen::VectorXd diff = z - sample;
    const double d = diff.norm();
    if (d == 0.0) return false;
    z -= (step / n) * diff / d;
    return true;
}

FbResult forward_backward(const ProcessModel& model, const ScenarioTree& initial, const QuantizeConfig& config) {
    const auto& topo = initial.topology();
    const int T = topo.stage_count();
    const int dim = model.dim();
    if (T != model.stages() || initial.dim() != dim) throw ShapeMismatch("tree and model shapes differ");
    if (config.iterations < 1) throw DegenerateInput("FB needs at least one iteration");
    if (config.r != 1.0 && config.r != 2.0) throw ShapeMismatch("FB supports r = 1 and r = 2");
    if (config.probability_floor < 0.0 || config.probability_floor * topo.leaf_count() >= 1.0) {
        throw ProbabilityError("probability floor must lie in [0, 1/N)");
    }

    // Work on the Gaussian core unless the lognormal model is optimized directly.
    const bool on_core = model.lognormal() && !config.lognormal_direct;
    const bool exp_samples = model.lognormal() && config.lognormal_direct;
    Eigen::MatrixXd values = initial.values();
    if (on_core) {
        for (NodeId n = topo.first_at_stage(1); n < topo.node_count(); ++n) {
            if ((values.col(n).array() <= 0.0).any()) throw DegenerateInput("lognormal tree has non-positive values");
            values.col(n) = values.col(n).array().log();
        }
    }
    std::vector<double> probs = initial.cond_probs();

    const int K = config.iterations;
    const int KP = config.probability_samples > 0 ? config.probability_samples : K;
    const int stride = config.trace_stride > 0 ? config.trace_stride : std::max(1, K / 100);
    FbResult out{initial, {}};
    auto& trace = out.trace;
    std::vector<double> cost(topo.node_count(), 0.0);

    for (int t = T - 1; t >= 1; --t) {
        const int last = config.variant == FbVariant::full ? T : t + 1;
        const int width = (last - t + 1) * dim;
        const int blocks = (K + stride - 1) / stride;
        std::vector<double> block_sum(blocks, 0.0);
        const NodeId root_begin = topo.first_at_stage(t - 1);
        const int subtrees = topo.count_at_stage(t - 1);
        long stage_skips = 0;

        for (NodeId v = root_begin; v < root_begin + subtrees; ++v) {
            if (topo.child_count(v) == 0) throw EmptySubtree("node " + std::to_string(v) + " has no children");
            Eigen::VectorXd hist = path_history(topo, values, v);
            if (exp_samples) hist = hist.array().log();
            const auto joint = model.core.joint_tail_conditional(t, hist);
            const Eigen::VectorXd mean = joint.mean.head(width);
            const Eigen::LLT<Eigen::MatrixXd> llt(joint.cov.topLeftCorner(width, width));
            if (llt.info() != Eigen::Success) throw SingularSubCovariance("joint tail covariance is singular");
            const Eigen::MatrixXd factor = llt.matrixL();
            std::vector<std::pair<NodeId, NodeId>> ranges;
            for (int s = t; s <= last; ++s) ranges.push_back(descendants(topo, v, s));
            const auto [cand_lo, cand_hi] = ranges.back();

            auto draw = [&](Rng& rng) {
                Eigen::VectorXd xi = mean + factor * standard_normals(width, rng);
                if (exp_samples) xi = xi.array().exp();
                return xi;
            };
            auto nearest = [&](const Eigen::VectorXd& xi) {
                for (int s = t; s <= last; ++s) {
                    const auto [lo, hi] = ranges[s - t];
                    for (NodeId u = lo; u < hi; ++u) {
                        const double base = s == t ? 0.0 : cost[topo.parent(u)];
                        cost[u] = base + path_cost(values.col(u) - xi.segment((s - t) * dim, dim), config.r);
                    }
                }
                NodeId best = cand_lo;
                for (NodeId u = cand_lo + 1; u < cand_hi; ++u) {
                    if (cost[u] < cost[best]) best = u;
                }
                return best;
            };
            auto class_size = [&](NodeId u) {
                if (config.variant == FbVariant::full) return topo.scenarios_under(u);
                return topo.stage(u) == t ? topo.child_count(u) : 1;
            };

            Rng rng = make_rng(config.seed, kFbStream + v);
            for (int k = 1; k <= K; ++k) {
                const Eigen::VectorXd xi = draw(rng);
                const NodeId best = nearest(xi);
                block_sum[(k - 1) / stride] += cost[best];
                double grad_sq = 0.0;
                if (config.step_rule == StepRule::polyak) {
                    for (NodeId u = best; topo.stage(u) >= t; u = topo.parent(u)) {
                        const double d = (values.col(u) - xi.segment((topo.stage(u) - t) * dim, dim)).squaredNorm();
                        grad_sq += config.r == 2.0 ? 4.0 * d : (d > 0.0 ? 1.0 : 0.0);
                    }
                }
                const double step = step_factor(config, k, grad_sq);
                for (NodeId u = best; topo.stage(u) >= t; u = topo.parent(u)) {
                    const Eigen::VectorXd target = xi.segment((topo.stage(u) - t) * dim, dim);
                    Eigen::VectorXd z = values.col(u);
                    if (config.r == 2.0) {
                        values.col(u) = r2_update(z, target, class_size(u), step);
                    } else if (r1_update_variant(z, target, class_size(u), step)) {
                        values.col(u) = z;
                    } else {
                        ++stage_skips;
                    }
                }
            }

            // Probability re-estimation from a fresh sample against the final quantizers.
            Rng prng = make_rng(config.seed, kProbStream + v);
            std::vector<long> counts(topo.node_count(), 0);
            for (int k = 0; k < KP; ++k) ++counts[nearest(draw(prng))];
            FbSubtreeCounts record{t, v, {}, false};
            for (NodeId u = cand_lo; u < cand_hi; ++u) {
                record.counts.push_back(counts[u]);
                if (counts[u] == 0) record.zero_count = true;
            }
            for (int s = last - 1; s >= t; --s) {
                const auto [lo, hi] = ranges[s - t];
                for (NodeId u = lo; u < hi; ++u) {
                    for (NodeId c : topo.children(u)) counts[u] += counts[c];
                }
            }
            counts[v] = KP;
            for (int s = t - 1; s < last; ++s) {
                const auto [lo, hi] = s == t - 1 ? std::pair{v, v + 1} : ranges[s - t];
                for (NodeId u = lo; u < hi; ++u) {
                    if (counts[u] == 0) continue;
                    double total = 0.0;
                    for (NodeId c : topo.children(u)) {
                        probs[c] = counts[c] == 0 ? config.probability_floor
                                                  : static_cast<double>(counts[c]) / static_cast<double>(counts[u]);
                        total += probs[c];
                    }
                    if (config.probability_floor > 0.0) {
                        for (NodeId c : topo.children(u)) probs[c] /= total;
                    }
                }
            }
            trace.zero_count = trace.zero_count || record.zero_count;
            trace.counts.push_back(std::move(record));
        }
        trace.skips += stage_skips;
        for (int b = 0; b < blocks; ++b) {
            const int end = std::min(K, (b + 1) * stride);
            const int len = end - b * stride;
            trace.records.push_back({t, end, block_sum[b] / (static_cast<double>(len) * subtrees), trace.skips});
        }
    }
    if (trace.zero_count) warn("FB left children without nearest samples; see the trace counts");
    if (on_core) exp_transform(topo, values);
    out.tree = ScenarioTree(topo, std::move(values), std::move(probs));
    return out;
}

ObjectiveEstimate objective_estimate(const ScenarioTree& tree, const ProcessModel& model, int sample_count, double r,
                                     std::uint64_t seed) {
    if (sample_count < 2) throw DegenerateInput("objective estimate needs at least two samples");
    const auto& topo = tree.topology();
    const int T = topo.stage_count();
    const int dim = tree.dim();
    if (T != model.stages() || dim != model.dim()) throw ShapeMismatch("tree and model shapes differ");
    Rng rng = make_rng(seed, kObjectiveStream);
    std::vector<double> cost(topo.node_count(), 0.0);
    const NodeId leaf0 = topo.first_at_stage(T);
    double sum = 0.0, sq = 0.0;
    for (int k = 0; k < sample_count; ++k) {
        const Eigen::VectorXd xi = model.sample_path(rng);
        for (NodeId u = topo.first_at_stage(1); u < topo.node_count(); ++u) {
            const int s = topo.stage(u);
            cost[u] = cost[topo.parent(u)] + path_cost(tree.value(u) - xi.segment((s - 1) * dim, dim), r);
        }
        const double best = *std::min_element(cost.begin() + leaf0, cost.end());
        sum += best;
        sq += best * best;
    }
    const double n = sample_count;
    const double mean = sum / n;
    const double var = std::max(0.0, (sq - n * mean * mean) / (n - 1.0));
    return {mean, std::sqrt(var / n)};
}

}  // namespace scentree
