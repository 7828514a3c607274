#pragma once

#include <Eigen/Core>

#include <span>
#include <vector>

namespace scentree {

using NodeId = int;

/// Shape of a scenario tree: parent links plus per-stage node ranges.
///
/// Nodes are stored in canonical breadth-first order. Stage 0 holds the
/// single root, stage T holds the leaves, and within every stage the nodes are
/// ordered by parent. Consequently the children of a node, the nodes of a
/// stage and the leaves below a node all occupy contiguous index ranges.
class TreeTopology {
public:
    TreeTopology() = default;

    /// `parents[0]` must be -1. Throws ShapeMismatch unless the array is in
    /// canonical order (parent indices non-decreasing, leaves all at depth T).
    static TreeTopology from_parents(std::vector<int> parents);

    /// `branching[t]` children for every node at stage t, t = 0..T-1.
    static TreeTopology balanced(std::span<const int> branching);

    int stage_count() const { return static_cast<int>(stage_begin_.size()) - 2; }
    int node_count() const { return static_cast<int>(parent_.size()); }
    int leaf_count() const { return count_at_stage(stage_count()); }

    NodeId parent(NodeId n) const { return parent_[n]; }
    int stage(NodeId n) const { return stage_[n]; }
    bool is_leaf(NodeId n) const { return stage_[n] == stage_count(); }

    std::span<const NodeId> children(NodeId n) const;
    int child_count(NodeId n) const { return child_end_[n] - child_begin_[n]; }

    NodeId first_at_stage(int t) const { return stage_begin_[t]; }
    int count_at_stage(int t) const { return stage_begin_[t + 1] - stage_begin_[t]; }

    NodeId leaf(int scenario) const { return stage_begin_[stage_count()] + scenario; }
    int scenario_of(NodeId leaf_node) const { return leaf_node - stage_begin_[stage_count()]; }

    /// Predecessor of scenario i at stage t (t = T returns the leaf itself).
    NodeId predecessor(int t, int scenario) const;

    /// Half-open range of scenario indices below node n.
    std::pair<int, int> scenario_range(NodeId n) const { return {leaf_begin_[n], leaf_end_[n]}; }
    int scenarios_under(NodeId n) const { return leaf_end_[n] - leaf_begin_[n]; }

    const std::vector<int>& parents() const { return parent_; }

    friend bool operator==(const TreeTopology& a, const TreeTopology& b) { return a.parent_ == b.parent_; }

private:
    std::vector<int> parent_;
    std::vector<int> stage_;
    std::vector<NodeId> child_list_;
    std::vector<int> child_begin_;
    std::vector<int> child_end_;
    std::vector<int> stage_begin_;
    std::vector<int> leaf_begin_;
    std::vector<int> leaf_end_;
};

/// Scenario-indexed node values: row i, stage t holds the D-vector z_t^(i).
class ScenarioMatrix {
public:
    ScenarioMatrix(int scenarios, int stages, int dim)
        : stages_(stages), dim_(dim), data_(Eigen::MatrixXd::Zero(scenarios, stages * dim)) {}

    int scenarios() const { return static_cast<int>(data_.rows()); }
    int stages() const { return stages_; }
    int dim() const { return dim_; }

    /// Stage t is 1-based, matching the tree's stage numbering.
    auto at(int scenario, int t) { return data_.row(scenario).segment((t - 1) * dim_, dim_); }
    auto at(int scenario, int t) const { return data_.row(scenario).segment((t - 1) * dim_, dim_); }

    /// Full path of one scenario, stages 1..T stacked.
    auto path(int scenario) const { return data_.row(scenario); }

    const Eigen::MatrixXd& data() const { return data_; }

private:
    int stages_;
    int dim_;
    Eigen::MatrixXd data_;
};

/// Finite scenario tree: topology, one D-vector per node and the conditional
/// probability of each node given its parent. Immutable once built.
class ScenarioTree {
public:
    /// `values` is D x node_count. Validates probabilities; see build_tree.
    ScenarioTree(TreeTopology topology, Eigen::MatrixXd values, std::vector<double> cond_probs);

    const TreeTopology& topology() const { return topology_; }
    int dim() const { return static_cast<int>(values_.rows()); }
    int stage_count() const { return topology_.stage_count(); }
    int node_count() const { return topology_.node_count(); }
    int leaf_count() const { return topology_.leaf_count(); }

    auto value(NodeId n) const { return values_.col(n); }
    double cond_prob(NodeId n) const { return cond_probs_[n]; }

    const Eigen::MatrixXd& values() const { return values_; }
    const std::vector<double>& cond_probs() const { return cond_probs_; }

    /// Unconditional probability of reaching every node.
    std::vector<double> node_probabilities() const;

    /// Node values along the root-to-leaf path of every scenario (root excluded).
    ScenarioMatrix scenario_matrix() const;

    /// Stacked values of stages 1..stage(n) on the path to node n.
    Eigen::VectorXd history(NodeId n) const;

    friend bool operator==(const ScenarioTree& a, const ScenarioTree& b);

private:
    TreeTopology topology_;
    Eigen::MatrixXd values_;
    std::vector<double> cond_probs_;
};

/// Partition of the scenarios by their stage-t predecessor.
struct NonAnticipativityClasses {
    int stage = 0;
    std::vector<std::vector<int>> classes;
    std::vector<int> class_of;  // scenario -> class index

    std::vector<int> sizes() const;
};

/// Builds a tree from scenario-indexed values. Throws NonAnticipativityViolation
/// when two scenarios sharing a predecessor disagree (exact comparison) and
/// ProbabilityError for invalid conditional probabilities. `cond_probs` is
/// indexed by node; the root entry is ignored.
ScenarioTree build_tree(const TreeTopology& topology, const ScenarioMatrix& values,
                        const std::vector<double>& cond_probs, const Eigen::VectorXd& root_value = {});

/// True when `values` assigns identical vectors to scenarios that share a node.
bool is_nonanticipative(const TreeTopology& topology, const ScenarioMatrix& values);

NonAnticipativityClasses nonanticipativity_classes(const TreeTopology& topology, int stage);

/// Orthogonal projection of per-scenario gradients (one row per scenario)
/// onto the non-anticipative subspace: every class is replaced by its mean.
Eigen::MatrixXd project_gradient(const NonAnticipativityClasses& classes, const Eigen::MatrixXd& raw);

std::vector<double> leaf_probabilities(const ScenarioTree& tree);

/// Tree rooted at `node` (which becomes stage 0). Throws LeafHasNoSubtree for leaves.
ScenarioTree subtree(const ScenarioTree& tree, NodeId node);

/// Flattens every subtree rooted at stage t-1 into one path per scenario, so
/// that the filtration from stage t onwards is the terminal one. Node values
/// are duplicated per scenario and leaf probabilities are preserved.
ScenarioTree make_clairvoyant(const ScenarioTree& tree, int stage);

/// Drops every stage beyond t.
ScenarioTree truncate(const ScenarioTree& tree, int stage);

/// Single-path tree through the given stage values (probabilities 1).
ScenarioTree single_path_tree(const std::vector<Eigen::VectorXd>& stage_values);

}  // namespace scentree
