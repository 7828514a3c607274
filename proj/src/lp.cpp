#include "scentree/lp.hpp"

#include "scentree/errors.hpp"

#include <Eigen/LU>

#include <cmath>
#include <limits>
#include <vector>

namespace scentree {

namespace {

constexpr double kPivotTol = 1e-11;
constexpr double kCostTol = 1e-10;

class Tableau {
public:
    Tableau(Eigen::MatrixXd a, Eigen::VectorXd b) : m_(a.rows()), n_(a.cols()) {
        t_ = Eigen::MatrixXd::Zero(m_ + 1, n_ + m_ + 1);
        t_.topLeftCorner(m_, n_) = a;
        t_.block(0, n_, m_, m_).setIdentity();
        t_.col(n_ + m_).head(m_) = b;
        basis_.resize(m_);
        for (Eigen::Index i = 0; i < m_; ++i) basis_[i] = n_ + i;
    }

    Eigen::Index rows() const { return m_; }
    Eigen::Index structural() const { return n_; }
    Eigen::Index rhs() const { return n_ + m_; }
    const std::vector<Eigen::Index>& basis() const { return basis_; }
    double value(Eigen::Index i) const { return t_(i, rhs()); }
    double objective() const { return -t_(m_, rhs()); }

    void set_cost(const Eigen::VectorXd& cost) {
        t_.row(m_).setZero();
        t_.row(m_).head(cost.size()) = cost.transpose();
        for (Eigen::Index i = 0; i < m_; ++i) {
            const double cb = basis_[i] < cost.size() ? cost[basis_[i]] : 0.0;
            if (cb != 0.0) t_.row(m_) -= cb * t_.row(i);
        }
    }

    /// Runs Bland's rule over columns [0, limit). Returns false when unbounded.
    bool optimize(Eigen::Index limit) {
        while (true) {
            Eigen::Index enter = -1;
            for (Eigen::Index j = 0; j < limit; ++j) {
                if (t_(m_, j) < -kCostTol) {
                    enter = j;
                    break;
                }
            }
            if (enter < 0) return true;
            Eigen::Index leave = -1;
            double best = std::numeric_limits<double>::infinity();
            for (Eigen::Index i = 0; i < m_; ++i) {
                const double a = t_(i, enter);
                if (a > kPivotTol) {
                    const double ratio = t_(i, rhs()) / a;
                    if (ratio < best - 1e-14 || (std::abs(ratio - best) <= 1e-14 && basis_[i] < basis_[leave])) {
                        best = ratio;
                        leave = i;
                    }
                }
            }
            if (leave < 0) return false;
            pivot(leave, enter);
        }
    }

    void pivot(Eigen::Index r, Eigen::Index c) {
        t_.row(r) /= t_(r, c);
        for (Eigen::Index i = 0; i <= m_; ++i) {
            if (i != r && t_(i, c) != 0.0) {
                t_.row(i) -= t_(i, c) * t_.row(r);
            }
        }
        basis_[r] = c;
    }

    /// Pivots artificial columns out of the basis where possible.
    void drive_out_artificials() {
        for (Eigen::Index i = 0; i < m_; ++i) {
            if (basis_[i] < n_) continue;
            for (Eigen::Index j = 0; j < n_; ++j) {
                if (std::abs(t_(i, j)) > 1e-9) {
                    pivot(i, j);
                    break;
                }
            }
        }
    }

private:
    Eigen::Index m_;
    Eigen::Index n_;
    Eigen::MatrixXd t_;
    std::vector<Eigen::Index> basis_;
};

}  // namespace

LpResult solve_lp(const LinearProgram& lp) {
    const Eigen::Index n = lp.c.size();
    const Eigen::Index me = lp.a_eq.rows();
    const Eigen::Index mu = lp.a_ub.rows();
    if ((me > 0 && lp.a_eq.cols() != n) || (mu > 0 && lp.a_ub.cols() != n) || lp.b_eq.size() != me ||
        lp.b_ub.size() != mu) {
        throw ShapeMismatch("linear program dimensions are inconsistent");
    }
    const Eigen::Index m = me + mu;
    const Eigen::Index ns = n + mu;  // structural + slack
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(m, ns);
    Eigen::VectorXd b(m);
    if (me > 0) a.topLeftCorner(me, n) = lp.a_eq;
    if (mu > 0) {
        a.bottomLeftCorner(mu, n) = lp.a_ub;
        a.bottomRightCorner(mu, mu).setIdentity();
    }
    b << lp.b_eq, lp.b_ub;
    Eigen::VectorXd sign = Eigen::VectorXd::Ones(m);
    for (Eigen::Index i = 0; i < m; ++i) {
        if (b[i] < 0) {
            sign[i] = -1.0;
            a.row(i) *= -1.0;
            b[i] *= -1.0;
        }
    }

    LpResult out;
    Tableau tab(a, b);
    Eigen::VectorXd phase1 = Eigen::VectorXd::Zero(ns + m);
    phase1.tail(m).setOnes();
    tab.set_cost(phase1);
    tab.optimize(ns + m);
    if (tab.objective() > 1e-9 * (1.0 + b.cwiseAbs().sum())) {
        out.status = LpStatus::infeasible;
        return out;
    }
    tab.drive_out_artificials();

    Eigen::VectorXd cost = Eigen::VectorXd::Zero(ns);
    cost.head(n) = lp.c;
    tab.set_cost(cost);
    if (!tab.optimize(ns)) {
        out.status = LpStatus::unbounded;
        return out;
    }
    out.status = LpStatus::optimal;
    Eigen::VectorXd xs = Eigen::VectorXd::Zero(ns);
    for (Eigen::Index i = 0; i < m; ++i) {
        if (tab.basis()[i] < ns) xs[tab.basis()[i]] = std::max(0.0, tab.value(i));
    }
    out.x = xs.head(n);
    out.objective = lp.c.dot(out.x);

    // Duals from B' y = c_B on the sign-normalized system.
    Eigen::MatrixXd basis_matrix(m, m);
    Eigen::VectorXd cb(m);
    for (Eigen::Index i = 0; i < m; ++i) {
        const Eigen::Index j = tab.basis()[i];
        if (j < ns) {
            basis_matrix.col(i) = a.col(j);
            cb[i] = cost[j];
        } else {
            basis_matrix.col(i) = Eigen::VectorXd::Unit(m, j - ns);
            cb[i] = 0.0;
        }
    }
    const Eigen::VectorXd y = basis_matrix.transpose().fullPivLu().solve(cb);
    out.dual_objective = b.dot(y);
    const Eigen::VectorXd reduced = cost - a.transpose() * y;
    out.dual_infeasibility = std::min(0.0, reduced.minCoeff());
    out.duals = sign.cwiseProduct(y);
    return out;
}

}  // namespace scentree
