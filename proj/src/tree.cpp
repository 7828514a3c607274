#include "scentree/tree.hpp"

#include "scentree/errors.hpp"

#include <cmath>
#include <sstream>

namespace scentree {

namespace {

constexpr double kProbabilityTolerance = 1e-12;
constexpr double kRenormalizeTolerance = 1e-9;

}  // namespace

TreeTopology TreeTopology::from_parents(std::vector<int> parents) {
    if (parents.empty() || parents[0] != -1) {
        throw ShapeMismatch("tree topology needs a root with parent -1 at index 0");
    }
    const int n = static_cast<int>(parents.size());
    TreeTopology topo;
    topo.stage_.assign(n, 0);
    for (int i = 1; i < n; ++i) {
        const int p = parents[i];
        if (p < 0 || p >= i) {
            throw ShapeMismatch("node " + std::to_string(i) + " has invalid parent " + std::to_string(p));
        }
        if (p < parents[i - 1]) {
            throw ShapeMismatch("parents must be non-decreasing (canonical breadth-first order)");
        }
        topo.stage_[i] = topo.stage_[p] + 1;
    }
    const int depth = topo.stage_.back();
    if (depth < 1) {
        throw ShapeMismatch("tree must have at least one stage below the root");
    }

    topo.child_begin_.assign(n, 0);
    topo.child_end_.assign(n, 0);
    topo.child_list_.resize(n > 0 ? n - 1 : 0);
    for (int i = 1; i < n; ++i) {
        topo.child_list_[i - 1] = i;
    }
    // Children of p are the contiguous block of nodes whose parent is p.
    {
        int i = 1;
        for (int p = 0; p < n; ++p) {
            topo.child_begin_[p] = i - 1;
            while (i < n && parents[i] == p) {
                ++i;
            }
            topo.child_end_[p] = i - 1;
        }
    }

    topo.stage_begin_.assign(depth + 2, n);
    for (int i = n - 1; i >= 0; --i) {
        topo.stage_begin_[topo.stage_[i]] = i;
    }
    for (int i = 0; i < n; ++i) {
        const bool leaf = topo.child_end_[i] == topo.child_begin_[i];
        if (leaf != (topo.stage_[i] == depth)) {
            std::ostringstream msg;
            msg << "node " << i << " at stage " << topo.stage_[i] << (leaf ? " is a leaf" : " has children")
                << " but the tree depth is " << depth;
            throw ShapeMismatch(msg.str());
        }
    }

    topo.leaf_begin_.assign(n, 0);
    topo.leaf_end_.assign(n, 0);
    const int first_leaf = topo.stage_begin_[depth];
    for (int i = n - 1; i >= 0; --i) {
        if (topo.stage_[i] == depth) {
            topo.leaf_begin_[i] = i - first_leaf;
            topo.leaf_end_[i] = i - first_leaf + 1;
        } else {
            const auto kids = topo.children(i);
            topo.leaf_begin_[i] = topo.leaf_begin_[kids.front()];
            topo.leaf_end_[i] = topo.leaf_end_[kids.back()];
        }
    }
    topo.parent_ = std::move(parents);
    return topo;
}

TreeTopology TreeTopology::balanced(std::span<const int> branching) {
    if (branching.empty()) {
        throw ShapeMismatch("balanced topology needs at least one stage");
    }
    std::vector<int> parents{-1};
    int stage_first = 0;
    int stage_count = 1;
    for (const int b : branching) {
        if (b < 1) {
            throw ShapeMismatch("branching factors must be positive");
        }
        const int next_first = static_cast<int>(parents.size());
        for (int p = stage_first; p < stage_first + stage_count; ++p) {
            for (int c = 0; c < b; ++c) {
                parents.push_back(p);
            }
        }
        stage_first = next_first;
        stage_count *= b;
    }
    return from_parents(std::move(parents));
}

std::span<const NodeId> TreeTopology::children(NodeId n) const {
    return {child_list_.data() + child_begin_[n], static_cast<std::size_t>(child_end_[n] - child_begin_[n])};
}

NodeId TreeTopology::predecessor(int t, int scenario) const {
    NodeId n = leaf(scenario);
    for (int s = stage_count(); s > t; --s) {
        n = parent_[n];
    }
    return n;
}

ScenarioTree::ScenarioTree(TreeTopology topology, Eigen::MatrixXd values, std::vector<double> cond_probs)
    : topology_(std::move(topology)), values_(std::move(values)), cond_probs_(std::move(cond_probs)) {
    const int n = topology_.node_count();
    if (values_.cols() != n || static_cast<int>(cond_probs_.size()) != n) {
        throw ShapeMismatch("node values / probabilities do not match the topology node count");
    }
    if (values_.rows() < 1) {
        throw ShapeMismatch("node values must have dimension >= 1");
    }
    if (!values_.allFinite()) {
        throw ShapeMismatch("node values must be finite");
    }
    cond_probs_[0] = 1.0;
    for (NodeId p = 0; p < n; ++p) {
        const auto kids = topology_.children(p);
        if (kids.empty()) {
            continue;
        }
        double sum = 0.0;
        for (const NodeId c : kids) {
            double& q = cond_probs_[c];
            if (!std::isfinite(q) || q < -kProbabilityTolerance) {
                throw ProbabilityError("node " + std::to_string(c) + " has negative probability");
            }
            q = std::max(q, 0.0);
            sum += q;
        }
        const double gap = std::abs(sum - 1.0);
        if (gap <= kProbabilityTolerance) {
            continue;
        }
        if (gap > kRenormalizeTolerance) {
            std::ostringstream msg;
            msg << "children of node " << p << " have probabilities summing to " << sum;
            throw ProbabilityError(msg.str());
        }
        warn("renormalized children of node " + std::to_string(p));
        for (const NodeId c : kids) {
            cond_probs_[c] /= sum;
        }
    }
}

std::vector<double> ScenarioTree::node_probabilities() const {
    std::vector<double> probs(node_count(), 1.0);
    for (NodeId n = 1; n < node_count(); ++n) {
        probs[n] = probs[topology_.parent(n)] * cond_probs_[n];
    }
    return probs;
}

ScenarioMatrix ScenarioTree::scenario_matrix() const {
    const int T = stage_count();
    ScenarioMatrix z(leaf_count(), T, dim());
    for (int i = 0; i < leaf_count(); ++i) {
        NodeId n = topology_.leaf(i);
        for (int t = T; t >= 1; --t) {
            z.at(i, t) = values_.col(n).transpose();
            n = topology_.parent(n);
        }
    }
    return z;
}

Eigen::VectorXd ScenarioTree::history(NodeId n) const {
    const int s = topology_.stage(n);
    const int d = dim();
    Eigen::VectorXd h(s * d);
    for (int t = s; t >= 1; --t) {
        h.segment((t - 1) * d, d) = values_.col(n);
        n = topology_.parent(n);
    }
    return h;
}

bool operator==(const ScenarioTree& a, const ScenarioTree& b) {
    return a.topology_ == b.topology_ && a.values_.rows() == b.values_.rows() && a.values_ == b.values_ &&
           a.cond_probs_ == b.cond_probs_;
}

std::vector<int> NonAnticipativityClasses::sizes() const {
    std::vector<int> out;
    out.reserve(classes.size());
    for (const auto& c : classes) {
        out.push_back(static_cast<int>(c.size()));
    }
    return out;
}

bool is_nonanticipative(const TreeTopology& topology, const ScenarioMatrix& values) {
    for (int t = 1; t <= topology.stage_count(); ++t) {
        for (int i = 0; i < values.scenarios(); ++i) {
            const int first = topology.scenario_range(topology.predecessor(t, i)).first;
            if (first != i && values.at(i, t) != values.at(first, t)) {
                return false;
            }
        }
    }
    return true;
}

ScenarioTree build_tree(const TreeTopology& topology, const ScenarioMatrix& values,
                        const std::vector<double>& cond_probs, const Eigen::VectorXd& root_value) {
    if (values.scenarios() != topology.leaf_count() || values.stages() != topology.stage_count()) {
        throw ShapeMismatch("scenario matrix shape does not match the topology");
    }
    const int d = values.dim();
    if (root_value.size() != 0 && root_value.size() != d) {
        throw ShapeMismatch("root value dimension mismatch");
    }
    if (!is_nonanticipative(topology, values)) {
        throw NonAnticipativityViolation("scenarios sharing a predecessor carry different values");
    }
    Eigen::MatrixXd node_values = Eigen::MatrixXd::Zero(d, topology.node_count());
    if (root_value.size() == d) {
        node_values.col(0) = root_value;
    }
    for (NodeId n = 1; n < topology.node_count(); ++n) {
        node_values.col(n) = values.at(topology.scenario_range(n).first, topology.stage(n)).transpose();
    }
    return ScenarioTree(topology, std::move(node_values), cond_probs);
}

NonAnticipativityClasses nonanticipativity_classes(const TreeTopology& topology, int stage) {
    if (stage < 1 || stage > topology.stage_count()) {
        throw ShapeMismatch("stage out of range");
    }
    NonAnticipativityClasses out;
    out.stage = stage;
    out.class_of.assign(topology.leaf_count(), -1);
    const NodeId first = topology.first_at_stage(stage);
    for (int k = 0; k < topology.count_at_stage(stage); ++k) {
        const auto [lo, hi] = topology.scenario_range(first + k);
        std::vector<int> members;
        for (int i = lo; i < hi; ++i) {
            members.push_back(i);
            out.class_of[i] = k;
        }
        out.classes.push_back(std::move(members));
    }
    return out;
}

Eigen::MatrixXd project_gradient(const NonAnticipativityClasses& classes, const Eigen::MatrixXd& raw) {
    if (static_cast<int>(classes.class_of.size()) != raw.rows()) {
        throw ShapeMismatch("gradient rows must match the scenario count");
    }
    Eigen::MatrixXd out = raw;
    for (const auto& members : classes.classes) {
        bool constant = true;
        for (const int i : members) {
            constant = constant && raw.row(i) == raw.row(members.front());
        }
        if (constant) {
            continue;
        }
        Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(raw.cols());
        for (const int i : members) {
            mean += raw.row(i);
        }
        mean /= static_cast<double>(members.size());
        for (const int i : members) {
            out.row(i) = mean;
        }
    }
    return out;
}

std::vector<double> leaf_probabilities(const ScenarioTree& tree) {
    const auto probs = tree.node_probabilities();
    const NodeId first = tree.topology().first_at_stage(tree.stage_count());
    return {probs.begin() + first, probs.end()};
}

ScenarioTree subtree(const ScenarioTree& tree, NodeId node) {
    const auto& topo = tree.topology();
    if (node < 0 || node >= topo.node_count()) {
        throw ShapeMismatch("node out of range");
    }
    if (topo.is_leaf(node)) {
        throw LeafHasNoSubtree("node " + std::to_string(node) + " is a leaf");
    }
    std::vector<NodeId> old_ids{node};
    NodeId lo = node;
    NodeId hi = node;  // inclusive range of descendants at the current stage
    while (!topo.is_leaf(lo)) {
        const NodeId next_lo = topo.children(lo).front();
        const NodeId next_hi = topo.children(hi).back();
        for (NodeId n = next_lo; n <= next_hi; ++n) {
            old_ids.push_back(n);
        }
        lo = next_lo;
        hi = next_hi;
    }
    std::vector<int> parents(old_ids.size(), -1);
    Eigen::MatrixXd values(tree.dim(), static_cast<Eigen::Index>(old_ids.size()));
    std::vector<double> probs(old_ids.size(), 1.0);
    std::vector<int> new_id(topo.node_count(), -1);
    for (std::size_t k = 0; k < old_ids.size(); ++k) {
        const NodeId o = old_ids[k];
        new_id[o] = static_cast<int>(k);
        values.col(static_cast<Eigen::Index>(k)) = tree.value(o);
        if (k > 0) {
            parents[k] = new_id[topo.parent(o)];
            probs[k] = tree.cond_prob(o);
        }
    }
    return ScenarioTree(TreeTopology::from_parents(std::move(parents)), std::move(values), std::move(probs));
}

ScenarioTree make_clairvoyant(const ScenarioTree& tree, int stage) {
    const auto& topo = tree.topology();
    const int T = topo.stage_count();
    if (stage < 1 || stage > T) {
        throw ShapeMismatch("clairvoyance stage must lie in 1..T");
    }
    const int N = topo.leaf_count();
    const NodeId kept = topo.first_at_stage(stage);  // nodes [0, kept) are unchanged
    const int total = kept + N * (T - stage + 1);

    std::vector<int> parents(total);
    Eigen::MatrixXd values(tree.dim(), total);
    std::vector<double> probs(total);
    for (NodeId n = 0; n < kept; ++n) {
        parents[n] = topo.parent(n);
        values.col(n) = tree.value(n);
        probs[n] = tree.cond_prob(n);
    }
    for (int t = stage; t <= T; ++t) {
        const int base = kept + (t - stage) * N;
        for (int i = 0; i < N; ++i) {
            const NodeId orig = topo.predecessor(t, i);
            const int id = base + i;
            values.col(id) = tree.value(orig);
            if (t == stage) {
                parents[id] = topo.predecessor(stage - 1, i);
                double p = 1.0;
                for (NodeId n = topo.leaf(i); n != parents[id]; n = topo.parent(n)) {
                    p *= tree.cond_prob(n);
                }
                probs[id] = p;
            } else {
                parents[id] = base - N + i;
                probs[id] = 1.0;
            }
        }
    }
    return ScenarioTree(TreeTopology::from_parents(std::move(parents)), std::move(values), std::move(probs));
}

ScenarioTree truncate(const ScenarioTree& tree, int stage) {
    const auto& topo = tree.topology();
    if (stage < 1 || stage > topo.stage_count()) {
        throw ShapeMismatch("truncation stage must lie in 1..T");
    }
    if (stage == topo.stage_count()) {
        return tree;
    }
    const int keep = topo.first_at_stage(stage + 1);
    std::vector<int> parents(topo.parents().begin(), topo.parents().begin() + keep);
    std::vector<double> probs(tree.cond_probs().begin(), tree.cond_probs().begin() + keep);
    return ScenarioTree(TreeTopology::from_parents(std::move(parents)), tree.values().leftCols(keep), std::move(probs));
}

ScenarioTree single_path_tree(const std::vector<Eigen::VectorXd>& stage_values) {
    if (stage_values.empty()) {
        throw ShapeMismatch("single path needs at least one stage");
    }
    const int T = static_cast<int>(stage_values.size());
    const auto d = stage_values.front().size();
    std::vector<int> parents(T + 1);
    Eigen::MatrixXd values = Eigen::MatrixXd::Zero(d, T + 1);
    for (int t = 0; t <= T; ++t) {
        parents[t] = t - 1;
        if (t > 0) {
            values.col(t) = stage_values[t - 1];
        }
    }
    return ScenarioTree(TreeTopology::from_parents(std::move(parents)), std::move(values),
                        std::vector<double>(T + 1, 1.0));
}

}  // namespace scentree
