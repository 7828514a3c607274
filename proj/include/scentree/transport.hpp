#pragma once

#include <Eigen/Core>

#include <span>
#include <string>
#include <vector>

namespace scentree {

/// Weighted point set: atoms are the columns of a D x n matrix.
struct DiscreteDistribution {
    Eigen::MatrixXd atoms;
    std::vector<double> weights;

    int dim() const { return static_cast<int>(atoms.rows()); }
    int size() const { return static_cast<int>(weights.size()); }

    /// Throws DegenerateInput / ProbabilityError on malformed input.
    void validate() const;

    static DiscreteDistribution point_mass(const Eigen::VectorXd& x);
    /// Equal weights on the columns of `atoms`.
    static DiscreteDistribution uniform(Eigen::MatrixXd atoms);
};

struct CostMatrix {
    Eigen::MatrixXd values;
    std::string metric = "euclidean";
    double order = 1.0;
};

/// Pairwise ||x_i - y_j||^order between the columns of x and y.
CostMatrix pairwise_cost(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, double order = 1.0);

struct TransportPlan {
    Eigen::MatrixXd flow;
    double max_row_residual = 0.0;
    double max_col_residual = 0.0;
};

struct TransportResult {
    TransportPlan plan;
    double objective = 0.0;
    /// Dual potentials (u_i + v_j <= c_ij); zero-weight atoms get potentials
    /// that keep their reduced costs nonnegative.
    Eigen::VectorXd row_potential;
    Eigen::VectorXd col_potential;
    double dual_objective = 0.0;
    int pivots = 0;

    double duality_gap() const { return objective - dual_objective; }
};

/// Exact solution of min sum pi_ij c_ij subject to row sums = supply and
/// column sums = demand, by the transportation (network) simplex method.
TransportResult solve_transport(const Eigen::MatrixXd& cost, std::span<const double> supply,
                                std::span<const double> demand);

inline TransportResult solve_transport(const CostMatrix& cost, std::span<const double> supply,
                                       std::span<const double> demand) {
    return solve_transport(cost.values, supply, demand);
}

/// Optimal value by enumerating every spanning-tree basis of the
/// transportation polytope. Intended as a test oracle; requires m * n <= 20.
double brute_force_transport(const Eigen::MatrixXd& cost, std::span<const double> supply,
                             std::span<const double> demand);

/// Kantorovich-Wasserstein distance of order r with the Euclidean ground metric.
double kw_distance(const DiscreteDistribution& p, const DiscreteDistribution& q, double r = 1.0);

/// Monotone-coupling W_r for scalar distributions (exact for r >= 1).
double kw_distance_1d(std::span<const double> x, std::span<const double> wx, std::span<const double> y,
                      std::span<const double> wy, double r = 1.0);

}  // namespace scentree
