#include "scentree/transport.hpp"

#include "scentree/errors.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numeric>

namespace scentree {

namespace {

constexpr double kMarginalTolerance = 1e-9;
constexpr int kDegenerateStreakForBland = 50;

struct Cell {
    int row;
    int col;
    double flow;
};

/// Transportation simplex on strictly positive marginals. The basis is a
/// spanning tree over m row nodes and n column nodes (ids m..m+n-1).
class TransportSimplex {
public:
    TransportSimplex(const Eigen::MatrixXd& cost, std::vector<double> supply, std::vector<double> demand)
        : cost_(cost),
          m_(static_cast<int>(supply.size())),
          n_(static_cast<int>(demand.size())),
          supply_(std::move(supply)),
          demand_(std::move(demand)),
          adjacency_(m_ + n_),
          is_basic_(static_cast<std::size_t>(m_) * n_, 0),
          u_(m_),
          v_(n_) {
        const double scale = std::max(1.0, cost_.cwiseAbs().maxCoeff());
        eps_ = 1e-12 * scale;
    }

    void solve() {
        initial_basis();
        int degenerate_streak = 0;
        const long max_pivots = 50L * (m_ + n_) * (m_ + n_) + 10000;
        while (pivots_ < max_pivots) {
            compute_potentials();
            const bool bland = degenerate_streak >= kDegenerateStreakForBland;
            int ei = -1;
            int ej = -1;
            double best = -eps_;
            for (int i = 0; i < m_ && !(bland && ei >= 0); ++i) {
                const double ui = u_[i];
                for (int j = 0; j < n_; ++j) {
                    const double r = cost_(i, j) - ui - v_[j];
                    if (r < best && !is_basic_[index(i, j)]) {
                        best = r;
                        ei = i;
                        ej = j;
                        if (bland) {
                            break;
                        }
                    }
                }
            }
            if (ei < 0) {
                return;
            }
            const double theta = pivot(ei, ej, bland);
            degenerate_streak = theta <= 0.0 ? degenerate_streak + 1 : 0;
            ++pivots_;
        }
        throw Error("transportation simplex exceeded its pivot budget");
    }

    Eigen::MatrixXd flow() const {
        Eigen::MatrixXd x = Eigen::MatrixXd::Zero(m_, n_);
        for (const auto& c : cells_) {
            x(c.row, c.col) = std::max(0.0, c.flow);
        }
        return x;
    }

    const Eigen::VectorXd& u() const { return u_; }
    const Eigen::VectorXd& v() const { return v_; }
    int pivots() const { return pivots_; }

private:
    std::size_t index(int i, int j) const { return static_cast<std::size_t>(i) * n_ + j; }

    void add_cell(int i, int j, double flow) {
        const int id = static_cast<int>(cells_.size());
        cells_.push_back({i, j, flow});
        adjacency_[i].push_back(id);
        adjacency_[m_ + j].push_back(id);
        is_basic_[index(i, j)] = 1;
    }

    // Least-cost rule; crossing out exactly one line per allocation (except
    // the last) yields m + n - 1 cells forming a spanning tree.
    void initial_basis() {
        std::vector<int> order(static_cast<std::size_t>(m_) * n_);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](int a, int b) { return cost_(a / n_, a % n_) < cost_(b / n_, b % n_); });
        std::vector<double> row_left = supply_;
        std::vector<double> col_left = demand_;
        std::vector<char> row_active(m_, 1);
        std::vector<char> col_active(n_, 1);
        int active_rows = m_;
        int active_cols = n_;
        cells_.reserve(m_ + n_ - 1);
        for (const int k : order) {
            const int i = k / n_;
            const int j = k % n_;
            if (!row_active[i] || !col_active[j]) {
                continue;
            }
            const double q = std::min(row_left[i], col_left[j]);
            add_cell(i, j, q);
            row_left[i] -= q;
            col_left[j] -= q;
            if (active_rows == 1 && active_cols == 1) {
                break;
            }
            const bool cross_row = active_cols == 1 || (active_rows > 1 && row_left[i] <= col_left[j]);
            if (cross_row) {
                row_active[i] = 0;
                --active_rows;
                col_left[j] += row_left[i];  // absorb rounding residue
                row_left[i] = 0.0;
            } else {
                col_active[j] = 0;
                --active_cols;
                row_left[i] += col_left[j];
                col_left[j] = 0.0;
            }
        }
    }

    void compute_potentials() {
        std::vector<char> seen(m_ + n_, 0);
        std::vector<int> stack{0};
        u_[0] = 0.0;
        seen[0] = 1;
        while (!stack.empty()) {
            const int node = stack.back();
            stack.pop_back();
            for (const int id : adjacency_[node]) {
                const Cell& c = cells_[id];
                const int other = node < m_ ? m_ + c.col : c.row;
                if (seen[other]) {
                    continue;
                }
                seen[other] = 1;
                if (other >= m_) {
                    v_[c.col] = cost_(c.row, c.col) - u_[c.row];
                } else {
                    u_[c.row] = cost_(c.row, c.col) - v_[c.col];
                }
                stack.push_back(other);
            }
        }
    }

    // Returns the step length theta.
    double pivot(int ei, int ej, bool bland) {
        // Tree path from column node ej to row node ei.
        std::vector<int> via(m_ + n_, -1);
        std::vector<char> seen(m_ + n_, 0);
        std::vector<int> stack{ei};
        seen[ei] = 1;
        const int target = m_ + ej;
        while (!stack.empty() && !seen[target]) {
            const int node = stack.back();
            stack.pop_back();
            for (const int id : adjacency_[node]) {
                const Cell& c = cells_[id];
                const int other = node < m_ ? m_ + c.col : c.row;
                if (!seen[other]) {
                    seen[other] = 1;
                    via[other] = id;
                    stack.push_back(other);
                }
            }
        }
        std::vector<int> path;  // cells from ej back to ei; alternating -, +, -, ...
        for (int node = target; node != ei;) {
            const int id = via[node];
            path.push_back(id);
            const Cell& c = cells_[id];
            node = node < m_ ? m_ + c.col : c.row;
        }
        double theta = std::numeric_limits<double>::infinity();
        int leaving = -1;
        for (std::size_t k = 0; k < path.size(); k += 2) {
            const Cell& c = cells_[path[k]];
            const double f = c.flow;
            const bool better = f < theta || (bland && f == theta && index(c.row, c.col) < index(cells_[leaving].row, cells_[leaving].col));
            if (better) {
                theta = f;
                leaving = path[k];
            }
        }
        theta = std::max(theta, 0.0);
        for (std::size_t k = 0; k < path.size(); ++k) {
            cells_[path[k]].flow += (k % 2 == 0) ? -theta : theta;
        }
        // Replace the leaving cell in place by the entering one.
        Cell& out = cells_[leaving];
        is_basic_[index(out.row, out.col)] = 0;
        auto drop = [&](std::vector<int>& adj) { adj.erase(std::find(adj.begin(), adj.end(), leaving)); };
        drop(adjacency_[out.row]);
        drop(adjacency_[m_ + out.col]);
        out = {ei, ej, theta};
        adjacency_[ei].push_back(leaving);
        adjacency_[m_ + ej].push_back(leaving);
        is_basic_[index(ei, ej)] = 1;
        return theta;
    }

    const Eigen::MatrixXd& cost_;
    int m_;
    int n_;
    std::vector<double> supply_;
    std::vector<double> demand_;
    std::vector<Cell> cells_;
    std::vector<std::vector<int>> adjacency_;
    std::vector<char> is_basic_;
    Eigen::VectorXd u_;
    Eigen::VectorXd v_;
    double eps_ = 0.0;
    int pivots_ = 0;
};

double checked_sum(std::span<const double> w, const char* what) {
    double s = 0.0;
    for (const double x : w) {
        if (!std::isfinite(x) || x < -1e-12) {
            throw InfeasibleMarginals(std::string(what) + " weights must be finite and nonnegative");
        }
        s += std::max(x, 0.0);
    }
    return s;
}

}  // namespace

void DiscreteDistribution::validate() const {
    if (weights.empty()) {
        throw DegenerateInput("distribution has no atoms");
    }
    if (atoms.cols() != static_cast<Eigen::Index>(weights.size())) {
        throw ShapeMismatch("atom count does not match weight count");
    }
    if (!atoms.allFinite()) {
        throw DegenerateInput("atoms must be finite");
    }
    double s = 0.0;
    for (const double w : weights) {
        if (!(w >= 0.0)) {
            throw ProbabilityError("negative weight");
        }
        s += w;
    }
    if (std::abs(s - 1.0) > 1e-12) {
        throw ProbabilityError("weights must sum to one");
    }
}

DiscreteDistribution DiscreteDistribution::point_mass(const Eigen::VectorXd& x) {
    return {x, {1.0}};
}

DiscreteDistribution DiscreteDistribution::uniform(Eigen::MatrixXd atoms) {
    const auto n = atoms.cols();
    return {std::move(atoms), std::vector<double>(static_cast<std::size_t>(n), 1.0 / static_cast<double>(n))};
}

CostMatrix pairwise_cost(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, double order) {
    if (x.rows() != y.rows()) {
        throw ShapeMismatch("atoms must share a dimension");
    }
    CostMatrix c;
    c.order = order;
    c.values.resize(x.cols(), y.cols());
    for (Eigen::Index i = 0; i < x.cols(); ++i) {
        for (Eigen::Index j = 0; j < y.cols(); ++j) {
            const double d = (x.col(i) - y.col(j)).norm();
            c.values(i, j) = order == 1.0 ? d : std::pow(d, order);
        }
    }
    return c;
}

TransportResult solve_transport(const Eigen::MatrixXd& cost, std::span<const double> supply,
                                std::span<const double> demand) {
    const int m = static_cast<int>(supply.size());
    const int n = static_cast<int>(demand.size());
    if (m == 0 || n == 0) {
        throw DegenerateInput("transport problem with empty support");
    }
    if (cost.rows() != m || cost.cols() != n) {
        throw ShapeMismatch("cost matrix does not match the marginals");
    }
    if (!cost.allFinite()) {
        throw DegenerateInput("cost matrix must be finite");
    }
    const double sa = checked_sum(supply, "supply");
    const double sb = checked_sum(demand, "demand");
    if (std::abs(sa - sb) > kMarginalTolerance * std::max(1.0, sa)) {
        throw InfeasibleMarginals("supply and demand totals differ");
    }

    // Drop zero-weight atoms; they carry no mass at any feasible plan.
    std::vector<int> rows;
    std::vector<int> cols;
    for (int i = 0; i < m; ++i) {
        if (supply[i] > 0.0) rows.push_back(i);
    }
    for (int j = 0; j < n; ++j) {
        if (demand[j] > 0.0) cols.push_back(j);
    }
    if (rows.empty() || cols.empty()) {
        throw DegenerateInput("transport problem with zero total mass");
    }
    Eigen::MatrixXd reduced(rows.size(), cols.size());
    std::vector<double> a(rows.size());
    std::vector<double> b(cols.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        a[i] = supply[rows[i]];
        for (std::size_t j = 0; j < cols.size(); ++j) {
            reduced(i, j) = cost(rows[i], cols[j]);
        }
    }
    for (std::size_t j = 0; j < cols.size(); ++j) {
        b[j] = demand[cols[j]] * (sa / sb);
    }

    TransportSimplex simplex(reduced, a, b);
    simplex.solve();

    TransportResult out;
    out.pivots = simplex.pivots();
    out.plan.flow = Eigen::MatrixXd::Zero(m, n);
    const Eigen::MatrixXd x = simplex.flow();
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < cols.size(); ++j) {
            out.plan.flow(rows[i], cols[j]) = x(i, j);
        }
    }
    out.objective = (out.plan.flow.array() * cost.array()).sum();

    out.row_potential = Eigen::VectorXd::Zero(m);
    out.col_potential = Eigen::VectorXd::Zero(n);
    for (std::size_t i = 0; i < rows.size(); ++i) out.row_potential[rows[i]] = simplex.u()[i];
    for (std::size_t j = 0; j < cols.size(); ++j) out.col_potential[cols[j]] = simplex.v()[j];
    // Dropped atoms: choose the largest potential that stays dual feasible.
    for (int i = 0; i < m; ++i) {
        if (supply[i] > 0.0) continue;
        double best = std::numeric_limits<double>::infinity();
        for (const int j : cols) best = std::min(best, cost(i, j) - out.col_potential[j]);
        out.row_potential[i] = best;
    }
    for (int j = 0; j < n; ++j) {
        if (demand[j] > 0.0) continue;
        double best = std::numeric_limits<double>::infinity();
        for (int i = 0; i < m; ++i) best = std::min(best, cost(i, j) - out.row_potential[i]);
        out.col_potential[j] = best;
    }
    double dual = 0.0;
    for (int i = 0; i < m; ++i) dual += supply[i] * out.row_potential[i];
    for (int j = 0; j < n; ++j) dual += demand[j] * out.col_potential[j];
    out.dual_objective = dual;

    const Eigen::VectorXd row_sums = out.plan.flow.rowwise().sum();
    const Eigen::VectorXd col_sums = out.plan.flow.colwise().sum().transpose();
    for (int i = 0; i < m; ++i) {
        out.plan.max_row_residual = std::max(out.plan.max_row_residual, std::abs(row_sums[i] - supply[i]));
    }
    for (int j = 0; j < n; ++j) {
        out.plan.max_col_residual = std::max(out.plan.max_col_residual, std::abs(col_sums[j] - demand[j]));
    }
    return out;
}

double brute_force_transport(const Eigen::MatrixXd& cost, std::span<const double> supply,
                             std::span<const double> demand) {
    const int m = static_cast<int>(supply.size());
    const int n = static_cast<int>(demand.size());
    if (m == 0 || n == 0) {
        throw DegenerateInput("transport problem with empty support");
    }
    if (m * n > 20) {
        throw SizeLimitExceeded("brute-force transport is limited to m * n <= 20");
    }
    if (cost.rows() != m || cost.cols() != n) {
        throw ShapeMismatch("cost matrix does not match the marginals");
    }
    const double sa = checked_sum(supply, "supply");
    const double sb = checked_sum(demand, "demand");
    if (std::abs(sa - sb) > kMarginalTolerance * std::max(1.0, sa)) {
        throw InfeasibleMarginals("supply and demand totals differ");
    }

    const int cells = m * n;
    const int basis_size = m + n - 1;
    double best = std::numeric_limits<double>::infinity();
    std::vector<int> chosen;
    // Enumerate all subsets of size m+n-1 through bitmasks of the cell index.
    for (unsigned mask = 0; mask < (1u << cells); ++mask) {
        if (std::popcount(mask) != basis_size) {
            continue;
        }
        chosen.clear();
        for (int k = 0; k < cells; ++k) {
            if (mask & (1u << k)) chosen.push_back(k);
        }
        // Spanning tree check by union-find.
        std::vector<int> uf(m + n);
        std::iota(uf.begin(), uf.end(), 0);
        auto find = [&](int x) {
            while (uf[x] != x) x = uf[x] = uf[uf[x]];
            return x;
        };
        bool tree = true;
        for (const int k : chosen) {
            const int a = find(k / n);
            const int b = find(m + k % n);
            if (a == b) {
                tree = false;
                break;
            }
            uf[a] = b;
        }
        if (!tree) {
            continue;
        }
        // Unique basic solution by peeling degree-one nodes.
        std::vector<double> left(m + n);
        for (int i = 0; i < m; ++i) left[i] = supply[i];
        for (int j = 0; j < n; ++j) left[m + j] = demand[j];
        std::vector<int> degree(m + n, 0);
        for (const int k : chosen) {
            ++degree[k / n];
            ++degree[m + k % n];
        }
        std::vector<char> done(chosen.size(), 0);
        std::vector<double> flow(chosen.size(), 0.0);
        for (int step = 0; step < basis_size; ++step) {
            for (std::size_t e = 0; e < chosen.size(); ++e) {
                if (done[e]) continue;
                const int r = chosen[e] / n;
                const int c = m + chosen[e] % n;
                if (degree[r] == 1 || degree[c] == 1) {
                    const int leaf = degree[r] == 1 ? r : c;
                    const int other = leaf == r ? c : r;
                    flow[e] = left[leaf];
                    left[other] -= flow[e];
                    left[leaf] = 0.0;
                    --degree[r];
                    --degree[c];
                    done[e] = 1;
                    break;
                }
            }
        }
        double value = 0.0;
        bool feasible = true;
        for (std::size_t e = 0; e < chosen.size(); ++e) {
            if (flow[e] < -1e-12) {
                feasible = false;
                break;
            }
            value += flow[e] * cost(chosen[e] / n, chosen[e] % n);
        }
        if (feasible) {
            best = std::min(best, value);
        }
    }
    return best;
}

double kw_distance_1d(std::span<const double> x, std::span<const double> wx, std::span<const double> y,
                      std::span<const double> wy, double r) {
    std::vector<int> ix(x.size());
    std::vector<int> iy(y.size());
    std::iota(ix.begin(), ix.end(), 0);
    std::iota(iy.begin(), iy.end(), 0);
    std::sort(ix.begin(), ix.end(), [&](int a, int b) { return x[a] < x[b]; });
    std::sort(iy.begin(), iy.end(), [&](int a, int b) { return y[a] < y[b]; });
    double total = 0.0;
    std::size_t a = 0;
    std::size_t b = 0;
    double left_a = ix.empty() ? 0.0 : wx[ix[0]];
    double left_b = iy.empty() ? 0.0 : wy[iy[0]];
    while (a < ix.size() && b < iy.size()) {
        const double q = std::min(left_a, left_b);
        const double d = std::abs(x[ix[a]] - y[iy[b]]);
        total += q * (r == 1.0 ? d : std::pow(d, r));
        left_a -= q;
        left_b -= q;
        if (left_a <= left_b) {
            if (++a < ix.size()) left_a += wx[ix[a]];
        } else {
            if (++b < iy.size()) left_b += wy[iy[b]];
        }
    }
    return r == 1.0 ? total : std::pow(std::max(total, 0.0), 1.0 / r);
}

double kw_distance(const DiscreteDistribution& p, const DiscreteDistribution& q, double r) {
    if (r < 1.0) {
        throw Error("Kantorovich-Wasserstein order must be >= 1");
    }
    if (p.dim() != q.dim()) {
        throw ShapeMismatch("distributions live in different dimensions");
    }
    if (p.size() == 0 || q.size() == 0) {
        throw DegenerateInput("distribution has no atoms");
    }
    if (p.dim() == 1) {
        const double sp = std::accumulate(p.weights.begin(), p.weights.end(), 0.0);
        const double sq = std::accumulate(q.weights.begin(), q.weights.end(), 0.0);
        if (std::abs(sp - sq) > kMarginalTolerance * std::max(1.0, sp)) {
            throw InfeasibleMarginals("supply and demand totals differ");
        }
        return kw_distance_1d({p.atoms.data(), static_cast<std::size_t>(p.size())}, p.weights,
                              {q.atoms.data(), static_cast<std::size_t>(q.size())}, q.weights, r);
    }
    const auto cost = pairwise_cost(p.atoms, q.atoms, r);
    const double value = solve_transport(cost, p.weights, q.weights).objective;
    return r == 1.0 ? value : std::pow(std::max(value, 0.0), 1.0 / r);
}

}  // namespace scentree
