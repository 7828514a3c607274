#pragma once

#include "scentree/process_models.hpp"
#include "scentree/tree.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <string>
#include <vector>

namespace scentree {

enum class StepRule { diminishing, square_summable, polyak };
enum class FbVariant { full, two_stage };

struct QuantizeConfig {
    /// Iterations per subtree.
    int iterations = 10000;
    StepRule step_rule = StepRule::diminishing;
    double step_exponent = 0.75;
    double r = 2.0;
    FbVariant variant = FbVariant::two_stage;
    std::uint64_t seed = 0;
    /// Probability given to children that attract no samples (then renormalized).
    double probability_floor = 0.0;
    /// Fresh samples for probability re-estimation; 0 means `iterations`.
    int probability_samples = 0;
    /// Sample size for multi-dimensional stage-wise quantization.
    int stagewise_samples = 20000;
    double lloyd_tolerance = 1e-12;
    int lloyd_max_sweeps = 100000;
    /// Run FB on the lognormal scale instead of exp-transforming the Gaussian result.
    bool lognormal_direct = false;
    /// Iterations averaged into one trace record; 0 picks iterations / 100.
    int trace_stride = 0;
};

StepRule step_rule_from_string(const std::string& name);
FbVariant variant_from_string(const std::string& name);

struct FbTraceRecord {
    int stage = 0;
    /// Last iteration of the averaged block.
    int iteration = 0;
    /// Mean nearest-path cost of the block's samples, averaged over subtrees.
    double objective = 0.0;
    /// Cumulative skipped zero-distance updates at this stage.
    long skips = 0;
};

struct FbSubtreeCounts {
    int stage = 0;
    NodeId root = 0;
    /// Nearest-sample counts per candidate path, in node order; they sum to the sample size.
    std::vector<long> counts;
    bool zero_count = false;
};

struct FbTrace {
    std::vector<FbTraceRecord> records;
    std::vector<FbSubtreeCounts> counts;
    long skips = 0;
    bool zero_count = false;

    std::string to_csv() const;
};

struct FbResult {
    ScenarioTree tree;
    FbTrace trace;
};

/// Children drawn i.i.d. from the node's conditional, equal probabilities.
ScenarioTree monte_carlo_tree(const ProcessModel& model, const TreeTopology& topology, std::uint64_t seed);

/// Each node's conditional quantized into its child count by Lloyd iteration
/// (exact in 1-D, sample based otherwise); probabilities are cell masses.
/// Lognormal models are quantized on the Gaussian core and exp-transformed.
ScenarioTree stagewise_optimal_tree(const ProcessModel& model, const TreeTopology& topology,
                                    const QuantizeConfig& config);

struct ScalarQuantizer {
    std::vector<double> points;
    std::vector<double> probabilities;
    int sweeps = 0;
};

/// Optimal b-point quantizer of N(0, 1) in order r (1 or 2), started at the
/// quantiles (2i - 1) / (2b).
ScalarQuantizer standard_normal_quantizer(int points, double r, double tolerance = 1e-12, int max_sweeps = 100000);

/// Backward pass of the forward-backward quantizer starting from `initial`.
FbResult forward_backward(const ProcessModel& model, const ScenarioTree& initial, const QuantizeConfig& config);

/// One r = 2 projected-gradient step: z - (step / n)(z - sample).
Eigen::VectorXd r2_update(const Eigen::VectorXd& z, const Eigen::VectorXd& sample, int n, double step);

/// One r = 1 step along the unit direction, z - (step / n)(z - sample) / ||z - sample||.
/// Returns false and leaves z unchanged when the sample coincides with z.
bool r1_update_variant(Eigen::VectorXd& z, const Eigen::VectorXd& sample, int n, double step);

struct ObjectiveEstimate {
    double value = 0.0;
    double std_error = 0.0;
};

/// Monte-Carlo estimate of E min_i sum_t ||z_t^(i) - xi_t||^r over model paths.
ObjectiveEstimate objective_estimate(const ScenarioTree& tree, const ProcessModel& model, int sample_count,
                                     double r, std::uint64_t seed);

}  // namespace scentree
