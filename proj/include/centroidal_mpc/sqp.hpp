#pragma once

// Gauss-Newton SQP with an l1 merit line search.
//
// Each iteration solves the convex QP built from the Gauss-Newton cost
// Hessian (plus a small diagonal floor) and the constraint linearizations,
// then backtracks on phi(x) = f(x) + nu * theta(x), theta being the l1 norm
// of the constraint violation. If the QP is infeasible the inequalities are
// relaxed with l1-penalized slacks (elastic mode).
//
// When the problem supplies constraint curvature and multipliers from the
// previous QP are available, the curvature term is added to the Hessian
// first; if that QP is not convex on the constraint null space, or its step
// is rejected by the line search, the iteration is redone with the plain
// Gauss-Newton Hessian.

#include "centroidal_mpc/log.hpp"
#include "centroidal_mpc/nlp.hpp"
#include "centroidal_mpc/qp.hpp"

#include <chrono>
#include <string>
#include <vector>

namespace centroidal_mpc {

struct SolverOptions {
    int max_iterations{100};
    double kkt_tolerance{1e-6};
    double constraint_tolerance{1e-7};
    double armijo_factor{1e-4};
    double backtracking_ratio{0.5};
    int max_line_search_steps{40};
    double hessian_regularization{1e-8};
    double initial_penalty{1.0};
    double elastic_penalty{1e4};
    /// Use NlpProblem::constraint_curvature when the problem provides it.
    bool constraint_curvature{true};
    QpOptions qp;

    void validate() const
    {
        if (max_iterations < 1 || !(kkt_tolerance > 0.0) || !(constraint_tolerance > 0.0)) {
            throw ConfigError("solver options: need max_iterations >= 1 and positive tolerances");
        }
        if (!(armijo_factor > 0.0 && armijo_factor < 0.5) || !(backtracking_ratio > 0.0 && backtracking_ratio < 1.0)) {
            throw ConfigError("solver options: need 0 < armijo_factor < 0.5 and 0 < backtracking_ratio < 1");
        }
        if (!(hessian_regularization >= 0.0) || !(elastic_penalty > 0.0)) {
            throw ConfigError("solver options: invalid regularization or elastic penalty");
        }
    }
};

enum class SolverStatus { converged, max_iterations, infeasible, numerical_failure };

inline const char* to_string(SolverStatus s)
{
    switch (s) {
    case SolverStatus::converged: return "converged";
    case SolverStatus::max_iterations: return "max_iter";
    case SolverStatus::infeasible: return "infeasible";
    case SolverStatus::numerical_failure: return "numerical_failure";
    }
    return "unknown";
}

struct IterationRecord {
    double penalty{0.0};
    double merit_before{0.0};
    double merit_after{0.0};
    double step_size{0.0};
    double kkt_residual{0.0};
    double constraint_violation{0.0};
    int qp_iterations{0};
    bool elastic{false};
    bool curvature{false};  // constraint curvature was part of the accepted step's Hessian
};

struct Solution {
    VectorX x;
    SolverStatus status{SolverStatus::numerical_failure};
    int iterations{0};
    double kkt_residual{std::numeric_limits<double>::infinity()};
    double constraint_violation{std::numeric_limits<double>::infinity()};
    double cost{0.0};
    double solve_time_ms{0.0};
    VectorX equality_multipliers;
    VectorX inequality_multipliers;
    std::vector<IterationRecord> history;

    [[nodiscard]] bool converged() const { return status == SolverStatus::converged; }
};

namespace detail {

struct NlpEvaluation {
    double cost{0.0};
    VectorX gradient;
    VectorX ceq;
    VectorX cin;
    SparseMatrix jeq;
    SparseMatrix jin;

    [[nodiscard]] bool finite() const
    {
        return std::isfinite(cost) && gradient.allFinite() && ceq.allFinite() && cin.allFinite();
    }
};

inline NlpEvaluation evaluate(const NlpProblem& p, const VectorX& x)
{
    NlpEvaluation e;
    e.cost = p.cost(x);
    e.gradient = p.cost_gradient(x);
    e.ceq = p.eval_equalities(x);
    e.cin = p.eval_inequalities(x);
    e.jeq = p.eval_equality_jacobian(x);
    e.jin = p.eval_inequality_jacobian(x);
    return e;
}

inline double l1_violation(const NlpProblem& p, const VectorX& x, const VectorX& ceq, const VectorX& cin)
{
    double v = ceq.lpNorm<1>() + cin.cwiseMax(0.0).sum();
    if (p.lower_bounds.size() > 0) {
        v += (p.lower_bounds - x).cwiseMax(0.0).sum();
    }
    if (p.upper_bounds.size() > 0) {
        v += (x - p.upper_bounds).cwiseMax(0.0).sum();
    }
    return v;
}

struct Multipliers {
    VectorX eq;
    VectorX in;
    VectorX lower;
    VectorX upper;

    [[nodiscard]] double max_abs() const
    {
        double m = 0.0;
        for (const VectorX* v : {&eq, &in, &lower, &upper}) {
            if (v->size() > 0) {
                m = std::max(m, v->cwiseAbs().maxCoeff());
            }
        }
        return m;
    }
};

/// Scaled KKT residual: max of the stationarity residual (scaled down when
/// the multipliers are large, as in interior-point practice) and the
/// complementarity residual.
inline double kkt_residual(const NlpProblem& p, const VectorX& x, const NlpEvaluation& e, const Multipliers& m)
{
    VectorX r = e.gradient;
    if (m.eq.size() > 0) {
        r += e.jeq.transpose() * m.eq;
    }
    if (m.in.size() > 0) {
        r += e.jin.transpose() * m.in;
    }
    double mult_l1 = m.eq.lpNorm<1>() + m.in.lpNorm<1>();
    Index count = m.eq.size() + m.in.size();
    if (m.upper.size() > 0) {
        r += m.upper - m.lower;
        mult_l1 += m.upper.lpNorm<1>() + m.lower.lpNorm<1>();
        count += 2 * m.upper.size();
    }
    constexpr double s_max = 100.0;
    const double scale = count > 0 ? std::max(s_max, mult_l1 / static_cast<double>(count)) / s_max : 1.0;
    double kkt = r.cwiseAbs().maxCoeff() / scale;

    double comp = 0.0;
    for (Index i = 0; i < m.in.size(); ++i) {
        comp = std::max(comp, std::abs(m.in(i) * e.cin(i)));
    }
    if (m.upper.size() > 0) {
        for (Index j = 0; j < x.size(); ++j) {
            if (p.upper_bounds.size() > 0 && std::isfinite(p.upper_bounds(j))) {
                comp = std::max(comp, std::abs(m.upper(j) * (p.upper_bounds(j) - x(j))));
            }
            if (p.lower_bounds.size() > 0 && std::isfinite(p.lower_bounds(j))) {
                comp = std::max(comp, std::abs(m.lower(j) * (x(j) - p.lower_bounds(j))));
            }
        }
    }
    return std::max(kkt, comp / scale);
}

inline SparseMatrix regularized_hessian(const NlpProblem& p, const VectorX& x, double floor)
{
    SparseMatrix h = p.cost_hessian(x);
    if (floor > 0.0) {
        SparseMatrix eye(h.rows(), h.cols());
        eye.setIdentity();
        h += floor * eye;
    }
    return h;
}

/// QP in (d, t): inequalities relaxed to C d - t <= c, t >= 0, cost + rho * sum(t).
inline QpSolution solve_elastic(const QpProblem& qp, double rho, const QpOptions& options, VectorX& slack)
{
    const Index n = qp.gradient.size();
    const Index m = qp.inequality_matrix.rows();
    QpProblem el;
    std::vector<Triplet> t;
    for (int col = 0; col < qp.hessian.outerSize(); ++col) {
        for (SparseMatrix::InnerIterator it(qp.hessian, col); it; ++it) {
            t.emplace_back(it.row(), it.col(), it.value());
        }
    }
    for (Index r = 0; r < m; ++r) {
        t.emplace_back(n + r, n + r, 1e-8);
    }
    el.hessian.resize(n + m, n + m);
    el.hessian.setFromTriplets(t.begin(), t.end());
    el.gradient.resize(n + m);
    el.gradient << qp.gradient, VectorX::Constant(m, rho);

    if (qp.equality_matrix.rows() > 0) {
        el.equality_matrix = SparseMatrix(qp.equality_matrix.rows(), n + m);
        std::vector<Triplet> te;
        for (int col = 0; col < qp.equality_matrix.outerSize(); ++col) {
            for (SparseMatrix::InnerIterator it(qp.equality_matrix, col); it; ++it) {
                te.emplace_back(it.row(), it.col(), it.value());
            }
        }
        el.equality_matrix.setFromTriplets(te.begin(), te.end());
        el.equality_rhs = qp.equality_rhs;
    }
    std::vector<Triplet> ti;
    for (int col = 0; col < qp.inequality_matrix.outerSize(); ++col) {
        for (SparseMatrix::InnerIterator it(qp.inequality_matrix, col); it; ++it) {
            ti.emplace_back(it.row(), it.col(), it.value());
        }
    }
    for (Index r = 0; r < m; ++r) {
        ti.emplace_back(r, n + r, -1.0);
    }
    el.inequality_matrix.resize(m, n + m);
    el.inequality_matrix.setFromTriplets(ti.begin(), ti.end());
    el.inequality_rhs = qp.inequality_rhs;

    el.lower = VectorX::Constant(n + m, -std::numeric_limits<double>::infinity());
    el.upper = VectorX::Constant(n + m, std::numeric_limits<double>::infinity());
    if (qp.lower.size() > 0) {
        el.lower.head(n) = qp.lower;
    }
    if (qp.upper.size() > 0) {
        el.upper.head(n) = qp.upper;
    }
    el.lower.tail(m).setZero();

    QpSolution sol = qp_solve(el, options);
    slack = sol.x.tail(m);
    sol.x.conservativeResize(n);
    if (sol.lower_multipliers.size() > 0) {
        sol.lower_multipliers.conservativeResize(n);
        sol.upper_multipliers.conservativeResize(n);
        if (qp.lower.size() == 0 && qp.upper.size() == 0) {
            sol.lower_multipliers.resize(0);
            sol.upper_multipliers.resize(0);
        }
    }
    return sol;
}

}  // namespace detail

inline Solution solve(const NlpProblem& problem, const VectorX& warm_start, const SolverOptions& options = {})
{
    using clock = std::chrono::steady_clock;
    const auto start = clock::now();
    problem.validate();
    options.validate();
    if (warm_start.size() != problem.num_variables) {
        throw StructuralError("solve: warm start has size " + std::to_string(warm_start.size()) + ", expected "
                              + std::to_string(problem.num_variables));
    }

    Solution sol;
    sol.x = warm_start;
    const auto stamp = [&]() {
        sol.solve_time_ms = std::chrono::duration<double, std::milli>(clock::now() - start).count();
        return sol;
    };

    detail::NlpEvaluation eval = detail::evaluate(problem, sol.x);
    sol.cost = eval.cost;
    sol.constraint_violation = problem.constraint_violation(sol.x);
    if (!eval.finite()) {
        sol.status = SolverStatus::numerical_failure;
        return stamp();
    }

    double penalty = options.initial_penalty;
    const bool bounded = problem.has_bounds();

    detail::Multipliers last;
    bool have_multipliers = false;
    for (int iter = 0; iter < options.max_iterations; ++iter) {
        QpProblem qp;
        qp.gradient = eval.gradient;
        qp.equality_matrix = eval.jeq;
        qp.equality_rhs = -eval.ceq;
        qp.inequality_matrix = eval.jin;
        qp.inequality_rhs = -eval.cin;
        if (problem.lower_bounds.size() > 0) {
            qp.lower = problem.lower_bounds - sol.x;
        }
        if (problem.upper_bounds.size() > 0) {
            qp.upper = problem.upper_bounds - sol.x;
        }
        const SparseMatrix gauss_newton = detail::regularized_hessian(problem, sol.x, options.hessian_regularization);

        const bool try_curvature = options.constraint_curvature && problem.constraint_curvature && have_multipliers;
        QpSolution step;
        bool elastic = false;
        bool accepted = false;
        bool used_curvature = false;
        double alpha = 1.0;
        double penalty_used = penalty;
        double merit = 0.0;
        double trial_merit = 0.0;
        double slope = 0.0;
        double step_norm = 0.0;
        VectorX trial;
        detail::NlpEvaluation trial_eval;
        detail::Multipliers mult;
        bool curved = try_curvature;
        while (!accepted) {
            used_curvature = curved;
            QpOptions qp_options = options.qp;
            if (curved) {
                qp.hessian = gauss_newton + problem.constraint_curvature(sol.x, last.eq, last.in);
                qp_options.check_convexity = true;
            } else {
                qp.hessian = gauss_newton;
            }

            step = qp_solve(qp, qp_options);
            elastic = false;
            if (step.status != QpStatus::solved && step.status != QpStatus::numerical_failure
                && step.status != QpStatus::nonconvex && problem.num_inequalities > 0) {
                VectorX slack;
                const double rho = options.elastic_penalty * (1.0 + eval.gradient.cwiseAbs().maxCoeff());
                step = detail::solve_elastic(qp, rho, qp_options, slack);
                elastic = true;
            }
            CMPC_LOG_DEBUG("sqp %d: %s qp %s in %d iterations (primal %.2e, dual %.2e, mu %.2e)%s", iter,
                           curved ? "curved" : "gauss-newton", to_string(step.status), step.iterations,
                           step.primal_residual, step.dual_residual, step.complementarity,
                           elastic ? ", elastic" : "");
            if (step.status != QpStatus::solved) {
                if (curved) {
                    curved = false;
                    continue;
                }
                sol.status = step.status == QpStatus::infeasible || step.status == QpStatus::max_iterations
                               ? SolverStatus::infeasible
                               : SolverStatus::numerical_failure;
                return stamp();
            }
            const VectorX& d = step.x;
            mult = detail::Multipliers{step.equality_multipliers, step.inequality_multipliers,
                                       bounded ? step.lower_multipliers : VectorX(),
                                       bounded ? step.upper_multipliers : VectorX()};

            // l1 merit line search
            penalty_used = std::max(penalty, 1.1 * mult.max_abs() + 1e-6);
            const double theta = detail::l1_violation(problem, sol.x, eval.ceq, eval.cin);
            merit = eval.cost + penalty_used * theta;
            VectorX lin_eq = eval.ceq;
            VectorX lin_in = eval.cin;
            if (problem.num_equalities > 0) {
                lin_eq += eval.jeq * d;
            }
            if (problem.num_inequalities > 0) {
                lin_in += eval.jin * d;
            }
            const double theta_lin = detail::l1_violation(problem, sol.x + d, lin_eq, lin_in);
            slope = eval.gradient.dot(d) + penalty_used * (theta_lin - theta);

            step_norm = d.cwiseAbs().maxCoeff();
            alpha = 1.0;
            trial_merit = merit;
            if (step_norm <= 1e-15 * (1.0 + sol.x.cwiseAbs().maxCoeff())) {
                trial = sol.x;
                trial_eval = eval;
                accepted = true;
                alpha = 0.0;
                break;
            }
            for (int ls = 0; ls < options.max_line_search_steps; ++ls) {
                trial = sol.x + alpha * d;
                trial_eval = detail::evaluate(problem, trial);
                if (trial_eval.finite()) {
                    trial_merit = trial_eval.cost
                                + penalty_used * detail::l1_violation(problem, trial, trial_eval.ceq, trial_eval.cin);
                    if (trial_merit <= merit + options.armijo_factor * alpha * std::min(slope, 0.0)) {
                        accepted = true;
                        break;
                    }
                }
                alpha *= options.backtracking_ratio;
            }
            if (!accepted) {
                CMPC_LOG_DEBUG("sqp %d: line search failed (merit %.6e, slope %.3e, |d| %.3e)", iter, merit, slope,
                               step_norm);
                if (!curved) {
                    break;
                }
                curved = false;
            }
        }
        if (!accepted) {
            sol.status = SolverStatus::numerical_failure;
            sol.kkt_residual = detail::kkt_residual(problem, sol.x, eval, mult);
            return stamp();
        }
        penalty = penalty_used;
        last = mult;
        have_multipliers = true;

        sol.x = std::move(trial);
        eval = std::move(trial_eval);
        sol.iterations = iter + 1;
        sol.cost = eval.cost;
        sol.constraint_violation = problem.constraint_violation(sol.x);
        sol.kkt_residual = detail::kkt_residual(problem, sol.x, eval, mult);
        sol.equality_multipliers = mult.eq;
        sol.inequality_multipliers = mult.in;

        IterationRecord rec;
        rec.penalty = penalty;
        rec.merit_before = merit;
        rec.merit_after = alpha > 0.0 ? trial_merit : merit;
        rec.step_size = alpha;
        rec.kkt_residual = sol.kkt_residual;
        rec.constraint_violation = sol.constraint_violation;
        rec.qp_iterations = step.iterations;
        rec.elastic = elastic;
        rec.curvature = used_curvature;
        sol.history.push_back(rec);

        if (sol.kkt_residual <= options.kkt_tolerance && sol.constraint_violation <= options.constraint_tolerance) {
            sol.status = SolverStatus::converged;
            return stamp();
        }
        if (alpha == 0.0) {
            // Zero step but KKT not met: the linearization cannot make progress.
            sol.status = SolverStatus::numerical_failure;
            return stamp();
        }
    }
    sol.status = SolverStatus::max_iterations;
    return stamp();
}

}  // namespace centroidal_mpc
