#pragma once

#include "scentree/process_models.hpp"
#include "scentree/transport.hpp"
#include "scentree/tree.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace scentree {

struct NestedDistanceResult {
    double value = 0.0;
    /// tables[t](i, j): r-th power of the nested distance between the subtrees
    /// rooted at the i-th stage-t node of A and the j-th stage-t node of B.
    /// tables[T] is zero.
    std::vector<Eigen::MatrixXd> tables;
    /// Optional leaf-to-leaf coupling composed from the conditional plans.
    std::optional<Eigen::MatrixXd> plan;
};

/// Nested distance of order r with ground cost sum_t ||u_t - v_t||^r, by the
/// backward recursion over subtree pairs. Root values are ignored.
NestedDistanceResult nested_distance(const ScenarioTree& a, const ScenarioTree& b, double r = 1.0,
                                     bool compose_plan = false);

/// Transport distance between the leaf-path distributions of two trees under
/// the same path cost; filtrations are ignored.
double path_kw_distance(const ScenarioTree& a, const ScenarioTree& b, double r = 1.0);

/// dl(A_c(t), B_c(t)) for t = 1..T.
std::vector<double> lower_bound_chain(const ScenarioTree& a, const ScenarioTree& b, double r = 1.0);

/// Sum over stages of the largest conditional transport distance between
/// children of any stage-(t-1) node pair.
double upper_bound_stagewise(const ScenarioTree& a, const ScenarioTree& b, double r = 1.0);

/// Sum over consecutive stage pairs (1,2), (3,4), ... of the largest two-stage
/// nested distance between subtrees, plus a trailing stage-wise term when T is odd.
double upper_bound_two_stage(const ScenarioTree& a, const ScenarioTree& b, double r = 1.0);

struct BoundConfig {
    double r = 1.0;
    /// Additional histories drawn from the model for the supremum search.
    int sampled_histories = 256;
    /// Empirical sample size used where no exact formula exists.
    int kw_samples = 4096;
    std::uint64_t seed = 0;
};

struct BoundReport {
    std::vector<double> lower_chain;
    std::map<std::string, double> upper;
    /// Per-stage sup-estimated terms of the model bounds, keyed like `upper`.
    std::map<std::string, std::vector<double>> stage_terms;
    std::vector<double> lipschitz;
    int sampled_histories = 0;
    int kw_samples = 0;
    std::string kw_estimator;
    std::uint64_t seed = 0;
};

/// Transport distance between a model conditional (Gaussian core `c`, mapped
/// through exp for lognormal models) and a discrete distribution. Scalar cases
/// with r in {1, 2} are exact; otherwise an empirical sample of `base` standard
/// normal columns is used (common random numbers across calls). Returns +inf
/// when a lognormal sample overflows.
double continuous_kw(const ProcessModel& model, const ConditionalGaussian& c, const DiscreteDistribution& q,
                     double r, const Eigen::MatrixXd& base);

/// Scalar Gaussian/lognormal against discrete atoms, exact for r = 1 and r = 2.
double scalar_kw(ModelKind kind, double mu, double sigma, std::span<const double> atoms,
                 std::span<const double> weights, double r);

/// Stage-wise conditional distances to a continuous model, each amplified by
/// prod_{s>t}(K_s + 1) with the model's Lipschitz constants.
double upper_bound_lipschitz(const ProcessModel& model, const ScenarioTree& tree, const BoundConfig& config,
                             std::vector<double>* stage_terms = nullptr);

/// Joint-tail bound: sum_t sup KW between the model's stage t..T conditional and
/// the tree's tail measure below each stage-(t-1) node. With `amplified` the
/// terms are multiplied by prod_{s>t}(K_c(s) + 1).
double upper_bound_joint_clairvoyant(const ProcessModel& model, const ScenarioTree& tree, const BoundConfig& config,
                                     bool amplified, std::vector<double>* stage_terms = nullptr);

/// Every finite-tree quantity plus, when a model is given, the model bounds.
BoundReport bound_report(const ScenarioTree& a, const ScenarioTree& b, double r = 1.0);
BoundReport bound_report(const ProcessModel& model, const ScenarioTree& tree, const BoundConfig& config);

}  // namespace scentree
