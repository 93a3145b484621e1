#pragma once

#include "centroidal_mpc/common.hpp"

#include <Eigen/Sparse>

#include <functional>
#include <limits>

namespace centroidal_mpc {

using SparseMatrix = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;

/// Callback form of a smooth nonlinear program
///
///   minimize    f(x)
///   subject to  c_E(x) = 0
///               c_I(x) <= 0
///               lower <= x <= upper
///
/// The Hessian callback returns a positive semidefinite Gauss-Newton
/// approximation of the cost Hessian (exact for least-squares costs with
/// linear residuals). The optional curvature callback returns
/// sum_r y_r Hess c_E,r + sum_r z_r Hess c_I,r. Empty bound vectors mean
/// "unbounded".
struct NlpProblem {
    Index num_variables{0};
    Index num_equalities{0};
    Index num_inequalities{0};

    std::function<double(const VectorX&)> cost;
    std::function<VectorX(const VectorX&)> cost_gradient;
    std::function<SparseMatrix(const VectorX&)> cost_hessian;
    std::function<SparseMatrix(const VectorX& x, const VectorX& eq_multipliers, const VectorX& ineq_multipliers)>
        constraint_curvature;

    std::function<VectorX(const VectorX&)> equalities;
    std::function<SparseMatrix(const VectorX&)> equality_jacobian;

    std::function<VectorX(const VectorX&)> inequalities;
    std::function<SparseMatrix(const VectorX&)> inequality_jacobian;

    VectorX lower_bounds;
    VectorX upper_bounds;

    [[nodiscard]] bool has_bounds() const { return lower_bounds.size() > 0 || upper_bounds.size() > 0; }

    void validate() const
    {
        if (num_variables <= 0) {
            throw StructuralError("NlpProblem: no variables");
        }
        if (!cost || !cost_gradient || !cost_hessian) {
            throw StructuralError("NlpProblem: cost callbacks missing");
        }
        if (num_equalities > 0 && (!equalities || !equality_jacobian)) {
            throw StructuralError("NlpProblem: equality callbacks missing");
        }
        if (num_inequalities > 0 && (!inequalities || !inequality_jacobian)) {
            throw StructuralError("NlpProblem: inequality callbacks missing");
        }
        if ((lower_bounds.size() != 0 && lower_bounds.size() != num_variables)
            || (upper_bounds.size() != 0 && upper_bounds.size() != num_variables)) {
            throw StructuralError("NlpProblem: bound vectors have the wrong size");
        }
    }

    [[nodiscard]] VectorX eval_equalities(const VectorX& x) const
    {
        return num_equalities > 0 ? equalities(x) : VectorX();
    }
    [[nodiscard]] VectorX eval_inequalities(const VectorX& x) const
    {
        return num_inequalities > 0 ? inequalities(x) : VectorX();
    }
    [[nodiscard]] SparseMatrix eval_equality_jacobian(const VectorX& x) const
    {
        return num_equalities > 0 ? equality_jacobian(x) : SparseMatrix(0, num_variables);
    }
    [[nodiscard]] SparseMatrix eval_inequality_jacobian(const VectorX& x) const
    {
        return num_inequalities > 0 ? inequality_jacobian(x) : SparseMatrix(0, num_variables);
    }

    /// Max-norm violation of all constraints, bounds included.
    [[nodiscard]] double constraint_violation(const VectorX& x) const
    {
        double v = 0.0;
        if (num_equalities > 0) {
            v = std::max(v, equalities(x).cwiseAbs().maxCoeff());
        }
        if (num_inequalities > 0) {
            v = std::max(v, inequalities(x).maxCoeff());
        }
        if (lower_bounds.size() > 0) {
            v = std::max(v, (lower_bounds - x).maxCoeff());
        }
        if (upper_bounds.size() > 0) {
            v = std::max(v, (x - upper_bounds).maxCoeff());
        }
        return v;
    }
};

}  // namespace centroidal_mpc
