#pragma once

// Convex QP solver used for the SQP subproblems.
//
//   minimize    1/2 x' H x + g' x
//   subject to  E x  = e
//               C x <= c
//               lower <= x <= upper
//
// Mehrotra predictor-corrector interior point method. The Newton system is
// the augmented system
//
//   [ H           E'      C'       ]
//   [ E           0       0        ]
//   [ C           0      -S Z^{-1} ]
//
// with the inequality block eliminated, so every iteration factorizes the
// quasi-definite matrix
//
//   [ H + C' Z S^{-1} C + dp I    E'    ]
//   [ E                          -de I  ]
//
// with a sparse LDL' whose symbolic analysis is done once per solve. The
// static regularization (dp, de) is removed by iterative refinement against
// the full unregularized operator.

#include "centroidal_mpc/nlp.hpp"

#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace centroidal_mpc {

struct QpProblem {
    SparseMatrix hessian;            // full symmetric storage, positive semidefinite
    VectorX gradient;
    SparseMatrix equality_matrix;    // may have zero rows
    VectorX equality_rhs;
    SparseMatrix inequality_matrix;  // may have zero rows
    VectorX inequality_rhs;
    VectorX lower;                   // empty or size n, -inf allowed
    VectorX upper;                   // empty or size n, +inf allowed
};

struct QpOptions {
    int max_iterations{100};
    double tolerance{1e-10};
    double primal_regularization{1e-9};
    double dual_regularization{1e-9};
    int refinement_steps{3};
    double step_fraction{0.995};
    /// Multipliers growing past this bound are taken as a certificate of infeasibility.
    double divergence_threshold{1e12};
    /// Report `nonconvex` when the reduced Hessian is not positive definite.
    bool check_convexity{false};
};

enum class QpStatus { solved, infeasible, max_iterations, numerical_failure, nonconvex };

struct QpSolution {
    VectorX x;
    VectorX equality_multipliers;
    VectorX inequality_multipliers;   // for the general rows C x <= c
    VectorX lower_multipliers;        // empty when the problem had no bounds
    VectorX upper_multipliers;
    QpStatus status{QpStatus::numerical_failure};
    int iterations{0};
    double primal_residual{0.0};
    double dual_residual{0.0};
    double complementarity{0.0};
};

inline const char* to_string(QpStatus s)
{
    switch (s) {
    case QpStatus::solved: return "solved";
    case QpStatus::infeasible: return "infeasible";
    case QpStatus::max_iterations: return "max_iterations";
    case QpStatus::numerical_failure: return "numerical_failure";
    case QpStatus::nonconvex: return "nonconvex";
    }
    return "unknown";
}

namespace detail {

class QpInteriorPoint {
public:
    QpInteriorPoint(const QpProblem& qp, const QpOptions& options) : qp_(qp), opt_(options)
    {
        n_ = qp.gradient.size();
        if (qp.hessian.rows() != n_ || qp.hessian.cols() != n_) {
            throw StructuralError("qp_solve: Hessian dimension mismatch");
        }
        me_ = qp.equality_matrix.rows();
        if (me_ > 0 && (qp.equality_matrix.cols() != n_ || qp.equality_rhs.size() != me_)) {
            throw StructuralError("qp_solve: equality block dimension mismatch");
        }
        const Index mg = qp.inequality_matrix.rows();
        if (mg > 0 && (qp.inequality_matrix.cols() != n_ || qp.inequality_rhs.size() != mg)) {
            throw StructuralError("qp_solve: inequality block dimension mismatch");
        }
        if ((qp.lower.size() != 0 && qp.lower.size() != n_) || (qp.upper.size() != 0 && qp.upper.size() != n_)) {
            throw StructuralError("qp_solve: bound vectors have the wrong size");
        }
        stack_inequalities(mg);
    }

    QpSolution run()
    {
        QpSolution out;
        assemble_kkt();
        ldlt_.analyzePattern(kkt_);

        x_ = VectorX::Zero(n_);
        y_ = VectorX::Zero(me_);
        s_ = VectorX::Ones(m_);
        z_ = VectorX::Ones(m_);
        if (!initial_point()) {
            out.status = QpStatus::numerical_failure;
            return finish(out);
        }

        const double scale_d = 1.0 + norm_inf(qp_.gradient);
        const double scale_e = 1.0 + norm_inf(eq_rhs());
        const double scale_i = 1.0 + norm_inf(c_);

        VectorX rd;
        VectorX re;
        VectorX ri;
        for (int iter = 0; iter <= opt_.max_iterations; ++iter) {
            residuals(rd, re, ri);
            const double mu = m_ > 0 ? s_.dot(z_) / static_cast<double>(m_) : 0.0;
            const double worst_pair = m_ > 0 ? s_.cwiseProduct(z_).maxCoeff() : 0.0;
            out.iterations = iter;
            out.dual_residual = norm_inf(rd) / scale_d;
            out.primal_residual = std::max(norm_inf(re) / scale_e, norm_inf(ri) / scale_i);
            out.complementarity = worst_pair;
            if (!std::isfinite(out.dual_residual) || !std::isfinite(out.primal_residual) || !std::isfinite(mu)) {
                out.status = QpStatus::numerical_failure;
                return finish(out);
            }
            if (out.dual_residual <= opt_.tolerance && out.primal_residual <= opt_.tolerance
                && worst_pair <= opt_.tolerance * scale_d) {
                out.status = QpStatus::solved;
                return finish(out);
            }
            if (iter == opt_.max_iterations) {
                break;
            }
            if (m_ > 0 && std::max(norm_inf(z_), norm_inf(y_)) > opt_.divergence_threshold) {
                out.status = QpStatus::infeasible;
                return finish(out);
            }

            if (!factorize()) {
                out.status = QpStatus::numerical_failure;
                return finish(out);
            }
            if (opt_.check_convexity && !expected_inertia()) {
                out.status = QpStatus::nonconvex;
                return finish(out);
            }

            if (m_ == 0) {
                // Pure equality-constrained QP: a single Newton step is exact.
                VectorX dx;
                VectorX dy;
                VectorX dz;
                newton_direction(rd, re, ri, VectorX(), dx, dy, dz);
                x_ += dx;
                y_ += dy;
                continue;
            }

            // Predictor.
            VectorX dx;
            VectorX dy;
            VectorX dz;
            VectorX rc = s_.cwiseProduct(z_);
            newton_direction(rd, re, ri, rc, dx, dy, dz);
            VectorX ds = -ri - c_mat_ * dx;
            const double alpha_aff = std::min(max_step(s_, ds), max_step(z_, dz));
            const double mu_aff = (s_ + alpha_aff * ds).dot(z_ + alpha_aff * dz) / static_cast<double>(m_);
            const double sigma = std::pow(mu_aff / mu, 3);

            // Corrector.
            rc.array() += ds.array() * dz.array() - sigma * mu;
            newton_direction(rd, re, ri, rc, dx, dy, dz);
            ds = -ri - c_mat_ * dx;
            const double alpha =
                std::min(1.0, opt_.step_fraction * std::min(max_step(s_, ds), max_step(z_, dz)));

            x_ += alpha * dx;
            y_ += alpha * dy;
            s_ += alpha * ds;
            z_ += alpha * dz;
        }
        out.status = out.primal_residual > std::sqrt(opt_.tolerance) ? QpStatus::infeasible : QpStatus::max_iterations;
        return finish(out);
    }

private:
    static double norm_inf(const VectorX& v) { return v.size() > 0 ? v.cwiseAbs().maxCoeff() : 0.0; }

    [[nodiscard]] VectorX eq_rhs() const { return me_ > 0 ? qp_.equality_rhs : VectorX(); }

    // C = [general rows; +e_j for finite upper bounds; -e_j for finite lower bounds]
    void stack_inequalities(Index mg)
    {
        std::vector<Triplet> t;
        std::vector<double> c;
        if (mg > 0) {
            for (int col = 0; col < qp_.inequality_matrix.outerSize(); ++col) {
                for (SparseMatrix::InnerIterator it(qp_.inequality_matrix, col); it; ++it) {
                    t.emplace_back(it.row(), it.col(), it.value());
                }
            }
            for (Index r = 0; r < mg; ++r) {
                c.push_back(qp_.inequality_rhs(r));
            }
        }
        Index row = mg;
        for (Index j = 0; j < qp_.upper.size(); ++j) {
            if (std::isfinite(qp_.upper(j))) {
                t.emplace_back(row++, j, 1.0);
                c.push_back(qp_.upper(j));
                upper_rows_.push_back(j);
            }
        }
        for (Index j = 0; j < qp_.lower.size(); ++j) {
            if (std::isfinite(qp_.lower(j))) {
                t.emplace_back(row++, j, -1.0);
                c.push_back(-qp_.lower(j));
                lower_rows_.push_back(j);
            }
        }
        general_rows_ = mg;
        m_ = row;
        c_mat_.resize(m_, n_);
        c_mat_.setFromTriplets(t.begin(), t.end());
        c_ = Eigen::Map<const VectorX>(c.data(), static_cast<Index>(c.size()));
        c_mat_t_ = c_mat_.transpose();
        if (me_ > 0) {
            e_mat_t_ = qp_.equality_matrix.transpose();
        }
    }

    void assemble_kkt()
    {
        const Index dim = n_ + me_;
        std::vector<Triplet> t;
        t.reserve(static_cast<std::size_t>(qp_.hessian.nonZeros() + n_ + 2 * me_ + qp_.equality_matrix.nonZeros()));
        for (int col = 0; col < qp_.hessian.outerSize(); ++col) {
            for (SparseMatrix::InnerIterator it(qp_.hessian, col); it; ++it) {
                if (it.row() >= it.col()) {
                    t.emplace_back(it.row(), it.col(), it.value());
                }
            }
        }
        for (Index j = 0; j < n_; ++j) {
            t.emplace_back(j, j, opt_.primal_regularization);
        }
        if (me_ > 0) {
            for (int col = 0; col < qp_.equality_matrix.outerSize(); ++col) {
                for (SparseMatrix::InnerIterator it(qp_.equality_matrix, col); it; ++it) {
                    t.emplace_back(n_ + it.row(), it.col(), it.value());
                }
            }
        }
        for (Index r = 0; r < me_; ++r) {
            t.emplace_back(n_ + r, n_ + r, -opt_.dual_regularization);
        }
        // Pattern of C' W C: every pair of columns sharing an inequality row.
        const SparseRowMatrix c_rows = c_mat_;
        for (Index r = 0; r < m_; ++r) {
            for (SparseRowMatrix::InnerIterator a(c_rows, r); a; ++a) {
                for (SparseRowMatrix::InnerIterator b(c_rows, r); b; ++b) {
                    if (a.col() >= b.col()) {
                        t.emplace_back(a.col(), b.col(), 0.0);
                    }
                }
            }
        }
        kkt_.resize(dim, dim);
        kkt_.setFromTriplets(t.begin(), t.end());
        kkt_.makeCompressed();
        base_values_ = Eigen::Map<const VectorX>(kkt_.valuePtr(), kkt_.nonZeros());
        diagonal_.resize(static_cast<std::size_t>(dim));
        for (Index j = 0; j < dim; ++j) {
            diagonal_[static_cast<std::size_t>(j)] = entry_position(j, j);
        }

        condensed_.clear();
        for (Index r = 0; r < m_; ++r) {
            for (SparseRowMatrix::InnerIterator a(c_rows, r); a; ++a) {
                for (SparseRowMatrix::InnerIterator b(c_rows, r); b; ++b) {
                    if (a.col() >= b.col()) {
                        condensed_.push_back({entry_position(a.col(), b.col()), r, a.value() * b.value()});
                    }
                }
            }
        }
    }

    // Offset of the stored lower-triangular entry (row, col) in the value array.
    [[nodiscard]] Index entry_position(Index row, Index col) const
    {
        const int* begin = kkt_.innerIndexPtr() + kkt_.outerIndexPtr()[col];
        const int* end = kkt_.innerIndexPtr() + kkt_.outerIndexPtr()[col + 1];
        const int* it = std::lower_bound(begin, end, static_cast<int>(row));
        if (it == end || *it != row) {
            throw StructuralError("qp_solve: missing KKT entry");
        }
        return static_cast<Index>(it - kkt_.innerIndexPtr());
    }

    // Factorizes the condensed matrix for barrier weights w = z / s.
    // Weights are clamped in the factorization only; refinement runs against
    // the exact operator. A breakdown is retried with stronger regularization.
    bool factorize_weights(const VectorX& w)
    {
        constexpr double w_max = 1e14;
        weights_ = w.cwiseMin(w_max);
        inverse_weights_ = w.cwiseInverse();
        Eigen::Map<VectorX> values(kkt_.valuePtr(), kkt_.nonZeros());
        double boost = 1.0;
        for (int attempt = 0; attempt < 4; ++attempt, boost *= 100.0) {
            values = base_values_;
            for (const CondensedEntry& e : condensed_) {
                values(e.position) += weights_(e.row) * e.coefficient;
            }
            if (attempt > 0) {
                for (Index j = 0; j < n_ + me_; ++j) {
                    values(diagonal_[static_cast<std::size_t>(j)]) +=
                        (j < n_ ? opt_.primal_regularization : -opt_.dual_regularization) * (boost - 1.0);
                }
            }
            ldlt_.factorize(kkt_);
            if (ldlt_.info() == Eigen::Success && ldlt_.vectorD().allFinite()) {
                return true;
            }
        }
        return false;
    }

    // n positive and m_E negative pivots: H + C' W C is positive definite on
    // the null space of E.
    [[nodiscard]] bool expected_inertia() const
    {
        const VectorX& d = ldlt_.vectorD();
        Index positive = 0;
        for (Index i = 0; i < d.size(); ++i) {
            positive += d(i) > 0.0 ? 1 : 0;
        }
        return positive == n_;
    }

    bool factorize()
    {
        if (m_ == 0) {
            return factorize_weights(VectorX());
        }
        return factorize_weights((z_.array() / s_.array()).matrix());
    }

    // Solves the regularized augmented system through the condensed factorization.
    [[nodiscard]] VectorX solve_condensed(const VectorX& rhs) const
    {
        VectorX reduced = rhs.head(n_ + me_);
        VectorX wz;
        if (m_ > 0) {
            wz = weights_.cwiseProduct(rhs.tail(m_));
            reduced.head(n_) += c_mat_t_ * wz;
        }
        const VectorX sol = ldlt_.solve(reduced);
        VectorX out(n_ + me_ + m_);
        out.head(n_ + me_) = sol;
        if (m_ > 0) {
            out.tail(m_) = weights_.cwiseProduct(c_mat_ * sol.head(n_)) - wz;
        }
        return out;
    }

    // Unregularized augmented operator applied to (vx, vy, vz).
    void apply_kkt(const VectorX& v, VectorX& out) const
    {
        const auto vx = v.head(n_);
        const auto vy = v.segment(n_, me_);
        const auto vz = v.tail(m_);
        out.resize(v.size());
        out.head(n_) = qp_.hessian * vx;
        if (me_ > 0) {
            out.head(n_) += e_mat_t_ * vy;
            out.segment(n_, me_) = qp_.equality_matrix * vx;
        }
        if (m_ > 0) {
            out.head(n_) += c_mat_t_ * vz;
            out.tail(m_) = c_mat_ * vx - vz.cwiseProduct(inverse_weights_);
        }
    }

    VectorX solve_refined(const VectorX& rhs) const
    {
        VectorX sol = solve_condensed(rhs);
        VectorX ax;
        for (int r = 0; r < opt_.refinement_steps; ++r) {
            apply_kkt(sol, ax);
            const VectorX res = rhs - ax;
            if (norm_inf(res) <= 1e-14 * (1.0 + norm_inf(rhs))) {
                break;
            }
            sol += solve_condensed(res);
        }
        return sol;
    }

    // Solves the Newton system for complementarity target rc (s o z - sigma mu).
    void newton_direction(const VectorX& rd, const VectorX& re, const VectorX& ri, const VectorX& rc, VectorX& dx,
                          VectorX& dy, VectorX& dz) const
    {
        VectorX rhs(n_ + me_ + m_);
        rhs.head(n_) = -rd;
        if (me_ > 0) {
            rhs.segment(n_, me_) = -re;
        }
        if (m_ > 0) {
            rhs.tail(m_) = -ri + (rc.array() / z_.array()).matrix();
        }
        const VectorX sol = solve_refined(rhs);
        dx = sol.head(n_);
        dy = sol.segment(n_, me_);
        dz = sol.tail(m_);
    }

    void residuals(VectorX& rd, VectorX& re, VectorX& ri) const
    {
        rd = qp_.hessian * x_ + qp_.gradient;
        if (me_ > 0) {
            rd += e_mat_t_ * y_;
            re = qp_.equality_matrix * x_ - qp_.equality_rhs;
        } else {
            re.resize(0);
        }
        if (m_ > 0) {
            rd += c_mat_t_ * z_;
            ri = c_mat_ * x_ + s_ - c_;
        } else {
            ri.resize(0);
        }
    }

    static double max_step(const VectorX& v, const VectorX& dv)
    {
        double alpha = 1.0;
        for (Index i = 0; i < v.size(); ++i) {
            if (dv(i) < 0.0) {
                alpha = std::min(alpha, -v(i) / dv(i));
            }
        }
        return alpha;
    }

    // Least-squares-like start from the system with unit barrier weights, then
    // slacks and multipliers pushed safely inside the positive orthant.
    bool initial_point()
    {
        if (!factorize_weights(VectorX::Ones(m_))) {
            return false;
        }
        VectorX rhs(n_ + me_ + m_);
        rhs.head(n_) = -qp_.gradient;
        if (me_ > 0) {
            rhs.segment(n_, me_) = qp_.equality_rhs;
        }
        if (m_ > 0) {
            rhs.tail(m_) = c_;
        }
        const VectorX sol = solve_condensed(rhs);
        if (!sol.allFinite()) {
            return false;
        }
        x_ = sol.head(n_);
        y_ = sol.segment(n_, me_);
        if (m_ > 0) {
            const VectorX slack = c_ - c_mat_ * x_;
            for (Index r = 0; r < m_; ++r) {
                s_(r) = std::max(slack(r), 1.0);
                z_(r) = 1.0;
            }
        }
        return true;
    }

    QpSolution& finish(QpSolution& out) const
    {
        out.x = x_;
        out.equality_multipliers = y_;
        out.inequality_multipliers = z_.head(general_rows_);
        if (qp_.upper.size() > 0 || qp_.lower.size() > 0) {
            out.upper_multipliers = VectorX::Zero(n_);
            out.lower_multipliers = VectorX::Zero(n_);
            Index r = general_rows_;
            for (Index j : upper_rows_) {
                out.upper_multipliers(j) = z_(r++);
            }
            for (Index j : lower_rows_) {
                out.lower_multipliers(j) = z_(r++);
            }
        }
        return out;
    }

    const QpProblem& qp_;
    QpOptions opt_;
    Index n_{0};
    Index me_{0};
    Index m_{0};
    Index general_rows_{0};
    std::vector<Index> upper_rows_;
    std::vector<Index> lower_rows_;
    SparseMatrix c_mat_;
    SparseMatrix c_mat_t_;
    SparseMatrix e_mat_t_;
    VectorX c_;
    struct CondensedEntry {
        Index position;
        Index row;
        double coefficient;
    };
    using SparseRowMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

    SparseMatrix kkt_;
    VectorX base_values_;
    std::vector<CondensedEntry> condensed_;
    std::vector<Index> diagonal_;
    VectorX weights_;          // as factorized
    VectorX inverse_weights_;  // exact s / z
    Eigen::SimplicialLDLT<SparseMatrix, Eigen::Lower, Eigen::AMDOrdering<int>> ldlt_;
    VectorX x_;
    VectorX y_;
    VectorX s_;
    VectorX z_;
};

}  // namespace detail

inline QpSolution qp_solve(const QpProblem& qp, const QpOptions& options = {})
{
    detail::QpInteriorPoint ip(qp, options);
    return ip.run();
}

}  // namespace centroidal_mpc
