#pragma once

#include "scentree/process_models.hpp"
#include "scentree/tree.hpp"

#include <Eigen/Core>

#include <functional>
#include <optional>
#include <vector>

namespace scentree {

/// Multi-period inventory problem: order x_{t-1} one period ahead at unit
/// price, cover shortage M_t at price h_t, carry K_t with retention l_t.
struct InventorySpec {
    /// Rapid-order prices h_1..h_T (> 1).
    std::vector<double> h;
    /// Retention factors l_1..l_T in (0, 1]; l_T values the terminal stock.
    std::vector<double> l;
    /// Selling prices, used only for the reported profit. May be empty.
    std::vector<double> s;
    /// Bound on l_{t-1} K_{t-1} + x_{t-1}, per product.
    std::optional<double> capacity;
    ProcessModel demand;

    int stages() const { return demand.stages(); }
    int products() const { return demand.dim(); }
    /// beta_t = (h_t - 1) / (h_t - l_t).
    double beta(int t) const;
    /// Throws BetaOutOfRange, InvalidParameter or ShapeMismatch.
    void validate() const;
};

enum class InventoryMethod { dynamic_programming, linear_program };

struct InventorySolution {
    double value = 0.0;
    /// value + E[sum_t s_t xi_t] when selling prices are given.
    std::optional<double> profit;
    /// D x N per-node orders (placed at the node, zero at leaves), inventory and shortage.
    Eigen::MatrixXd order;
    Eigen::MatrixXd inventory;
    Eigen::MatrixXd shortage;
    InventoryMethod method = InventoryMethod::dynamic_programming;
    /// Primal-dual gap of the LP route; zero for the exact recursion.
    double duality_gap = 0.0;
};

/// Exact optimum of the problem on a scenario tree. Products separate; each is
/// solved by backward recursion on concave piecewise-linear value functions,
/// or as one dense LP per product (small trees only).
InventorySolution solve_on_tree(const InventorySpec& spec, const ScenarioTree& tree,
                                InventoryMethod method = InventoryMethod::dynamic_programming);

/// Closed-form optimal value for Gaussian demand, summed over products.
double closed_form_value_gaussian(const InventorySpec& spec);

/// Closed-form value for lognormal demand in its literal form:
/// -sum h_t e^{m_t} + sum (h_t - 1)[1 - e^{m_t} Phi(z_t - s_t) / beta_t], m_t = mu_t + c_tt / 2.
double closed_form_value_lognormal(const InventorySpec& spec);

/// Lognormal value from the AV@R representation of the optimum:
/// -sum h_t E xi_t + sum (h_t - 1) E AV@R_{beta_t}(xi_t | past).
double lognormal_value_from_avar(const InventorySpec& spec);

/// Order at stage t (0..T-1) after history xi_1..xi_t with stock K_t:
/// VaR_{beta_{t+1}}(xi_{t+1} | past) - l_t K_t, per product. May be negative.
Eigen::VectorXd closed_form_policy(const InventorySpec& spec, int t, const Eigen::VectorXd& history,
                                   const Eigen::VectorXd& stock);

/// Order rule: (stage t, history xi_1..xi_t, stock K_t) -> x_t.
using OrderPolicy = std::function<Eigen::VectorXd(int, const Eigen::VectorXd&, const Eigen::VectorXd&)>;

struct SimulationSummary {
    double mean = 0.0;
    double std_error = 0.0;
    int paths = 0;
    /// Negative orders clamped to zero.
    long clamped = 0;
};

/// Rolls the policy forward on sampled demand paths (clamping orders at 0).
SimulationSummary simulate_policy(const InventorySpec& spec, const OrderPolicy& policy, int paths, std::uint64_t seed);

/// Same, on caller-supplied paths (one stacked path per column).
SimulationSummary simulate_policy(const InventorySpec& spec, const OrderPolicy& policy, const Eigen::MatrixXd& paths);

/// Random stationary one-product instance: mu_t = 100, c_tt = 100, c_st = 10 U,
/// l_t = 0.1 U, h_t = 1 + U.
InventorySpec random_inventory_spec(int stages, Rng& rng);

}  // namespace scentree
