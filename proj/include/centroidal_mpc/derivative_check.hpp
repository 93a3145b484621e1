#pragma once

#include "centroidal_mpc/nlp.hpp"

#include <string>

namespace centroidal_mpc {

/// Worst disagreement between analytic and central-difference derivatives.
/// The relative error of an entry is |analytic - fd| / max(1, |analytic|, |fd|).
struct DerivativeReport {
    enum class Block { none, gradient, equality_jacobian, inequality_jacobian };

    double max_relative_error{0.0};
    Block worst_block{Block::none};
    Index worst_row{-1};
    Index worst_col{-1};
    double analytic{0.0};
    double finite_difference{0.0};
};

inline const char* to_string(DerivativeReport::Block b)
{
    switch (b) {
    case DerivativeReport::Block::none: return "none";
    case DerivativeReport::Block::gradient: return "gradient";
    case DerivativeReport::Block::equality_jacobian: return "equality_jacobian";
    case DerivativeReport::Block::inequality_jacobian: return "inequality_jacobian";
    }
    return "unknown";
}

inline DerivativeReport check_derivatives(const NlpProblem& problem, const VectorX& point, double fd_step = 1e-6)
{
    if (!(fd_step > 0.0)) {
        throw ConfigError("check_derivatives: fd_step must be positive");
    }
    problem.validate();
    if (point.size() != problem.num_variables) {
        throw StructuralError("check_derivatives: point has the wrong dimension");
    }

    DerivativeReport report;
    const auto consider = [&report](DerivativeReport::Block block, Index row, Index col, double a, double fd) {
        const double err = std::abs(a - fd) / std::max({1.0, std::abs(a), std::abs(fd)});
        if (err > report.max_relative_error || report.worst_block == DerivativeReport::Block::none) {
            report.max_relative_error = err;
            report.worst_block = block;
            report.worst_row = row;
            report.worst_col = col;
            report.analytic = a;
            report.finite_difference = fd;
        }
    };

    const VectorX grad = problem.cost_gradient(point);
    const Eigen::MatrixXd jeq = Eigen::MatrixXd(problem.eval_equality_jacobian(point));
    const Eigen::MatrixXd jin = Eigen::MatrixXd(problem.eval_inequality_jacobian(point));

    VectorX x = point;
    for (Index j = 0; j < problem.num_variables; ++j) {
        const double orig = x(j);
        x(j) = orig + fd_step;
        const double fp = problem.cost(x);
        const VectorX ep = problem.eval_equalities(x);
        const VectorX ip = problem.eval_inequalities(x);
        x(j) = orig - fd_step;
        const double fm = problem.cost(x);
        const VectorX em = problem.eval_equalities(x);
        const VectorX im = problem.eval_inequalities(x);
        x(j) = orig;

        const double inv = 1.0 / (2.0 * fd_step);
        consider(DerivativeReport::Block::gradient, 0, j, grad(j), (fp - fm) * inv);
        for (Index r = 0; r < problem.num_equalities; ++r) {
            consider(DerivativeReport::Block::equality_jacobian, r, j, jeq(r, j), (ep(r) - em(r)) * inv);
        }
        for (Index r = 0; r < problem.num_inequalities; ++r) {
            consider(DerivativeReport::Block::inequality_jacobian, r, j, jin(r, j), (ip(r) - im(r)) * inv);
        }
    }
    return report;
}

}  // namespace centroidal_mpc
