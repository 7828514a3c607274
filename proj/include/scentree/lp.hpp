#pragma once

#include <Eigen/Core>

namespace scentree {

/// min c'x  s.t.  A_eq x = b_eq,  A_ub x <= b_ub,  x >= 0.
struct LinearProgram {
    Eigen::VectorXd c;
    Eigen::MatrixXd a_eq;
    Eigen::VectorXd b_eq;
    Eigen::MatrixXd a_ub;
    Eigen::VectorXd b_ub;
};

enum class LpStatus { optimal, infeasible, unbounded };

struct LpResult {
    LpStatus status = LpStatus::infeasible;
    Eigen::VectorXd x;
    double objective = 0.0;
    /// Multipliers of the equality rows followed by the inequality rows.
    Eigen::VectorXd duals;
    double dual_objective = 0.0;
    /// Most negative reduced cost c - A'y over the structural columns.
    double dual_infeasibility = 0.0;
};

/// Dense two-phase simplex with Bland's rule. Meant for small problems and as
/// an independent check of the specialised solvers.
LpResult solve_lp(const LinearProgram& lp);

}  // namespace scentree
