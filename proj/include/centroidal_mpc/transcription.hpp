#pragma once

// Direct multiple-shooting transcription of the centroidal MPC.
//
// Decision vector, knot-interleaved:  X_0 U_0 X_1 U_1 ... X_{N-1} U_{N-1} X_N
//   X_k = (p_com, h_lin, h_ang, p_C1, ..., p_Cnc)
//   U_k = (f_11, ..., f_1nv1, ..., f_nc1, ..., f_ncnv, v_C1, ..., v_Cnc)
//
// Equalities: initial-state pin, explicit-Euler defects for h, p_com and
// every p_C, and contact-box rows whose bounds coincide.
// Inequalities: friction pyramid rows for every (k, i, j), contact-box rows.
// Cost: force regularization, force rate, centroidal tracking and contact
// regularization; every term is a weighted least-squares of a linear
// residual, so the Gauss-Newton Hessian is exact and constant.

#include "centroidal_mpc/common.hpp"
#include "centroidal_mpc/model.hpp"
#include "centroidal_mpc/nlp.hpp"
#include "centroidal_mpc/plan.hpp"

#include <memory>
#include <optional>
#include <span>
#include <vector>

namespace centroidal_mpc {

/// Diagonals of the positive definite weight matrices of the cost terms.
struct Weights {
    Vector3 force_regularization{Vector3::Constant(0.1)};
    Vector3 force_rate{Vector3::Constant(0.01)};
    Vector3 angular_momentum{Vector3::Constant(10.0)};
    Vector3 com_tracking{Vector3::Constant(100.0)};
    Vector3 contact_regularization{Vector3::Constant(1000.0)};

    void validate() const
    {
        const auto check = [](const Vector3& w, const char* name) {
            if (!w.allFinite() || (w.array() <= 0.0).any()) {
                throw ConfigError(std::string("weights.") + name + " must have positive diagonal entries");
            }
        };
        check(force_regularization, "force_regularization");
        check(force_rate, "force_rate");
        check(angular_momentum, "angular_momentum");
        check(com_tracking, "com_tracking");
        check(contact_regularization, "contact_regularization");
    }
};

/// Half-space description A * (R^T f) <= b of the linearized friction cone.
/// Rows: +x, -x, +y, -y tangential faces, normal lower bound, normal upper bound.
struct FrictionPyramid {
    Eigen::Matrix<double, 6, 3> A{Eigen::Matrix<double, 6, 3>::Zero()};
    Vector6 b{Vector6::Zero()};

    [[nodiscard]] Vector6 residual(const Matrix3& orientation, const Vector3& force) const
    {
        return A * (orientation.transpose() * force) - b;
    }

    [[nodiscard]] bool satisfied(const Matrix3& orientation, const Vector3& force, double tolerance = 0.0) const
    {
        return residual(orientation, force).maxCoeff() <= tolerance;
    }
};

/// Inner pyramid of the Coulomb cone with normal-force bounds.
inline FrictionPyramid friction_pyramid(double mu, double normal_min, double normal_max)
{
    if (!(mu > 0.0) || !(normal_min >= 0.0) || !(normal_min < normal_max) || !std::isfinite(mu)) {
        throw ConfigError("friction_pyramid: need mu > 0 and 0 <= f_min < f_max");
    }
    const double k = mu / std::sqrt(2.0);
    FrictionPyramid p;
    p.A << 1.0, 0.0, -k,
          -1.0, 0.0, -k,
           0.0, 1.0, -k,
           0.0, -1.0, -k,
           0.0, 0.0, -1.0,
           0.0, 0.0, 1.0;
    p.b << 0.0, 0.0, 0.0, 0.0, -normal_min, normal_max;
    return p;
}

/// Rectangle, in the contact frame, within which a contact may be moved away
/// from its nominal location.
struct ContactBox {
    Vector3 lower{-0.15, -0.15, 0.0};
    Vector3 upper{0.15, 0.15, 0.0};

    void validate() const
    {
        if ((lower.array() > upper.array()).any() || lower.hasNaN() || upper.hasNaN()) {
            throw ConfigError("contact box: lower bound must not exceed upper bound");
        }
    }
};

struct ContactBoxCheck {
    Vector3 residual;   // R^T (p_nominal - p)
    Vector3 lower;
    Vector3 upper;

    [[nodiscard]] bool feasible(double tolerance = 0.0) const
    {
        return ((residual - upper).array() <= tolerance).all() && ((lower - residual).array() <= tolerance).all();
    }
};

inline ContactBoxCheck contact_box_violation(const Vector3& position, const Vector3& nominal,
                                             const Matrix3& orientation, const ContactBox& box)
{
    return {orientation.transpose() * (nominal - position), box.lower, box.upper};
}

/// Moves a position onto the closest point of the box around its nominal.
inline Vector3 project_into_box(const Vector3& position, const Vector3& nominal,
                                const Matrix3& orientation, const ContactBox& box)
{
    const Vector3 r = (orientation.transpose() * (nominal - position)).cwiseMax(box.lower).cwiseMin(box.upper);
    return nominal - orientation * r;
}

namespace detail {

inline double half_weighted_square(const Vector3& e, const Vector3& w)
{
    return 0.5 * (w.array() * e.array().square()).sum();
}

}  // namespace detail

// ---- individual cost terms -------------------------------------------------

inline double force_regularization_cost(std::span<const Vector3> corner_forces, const Vector3& weight)
{
    if (corner_forces.empty()) {
        throw StructuralError("force_regularization_cost: no corner forces");
    }
    Vector3 mean = Vector3::Zero();
    for (const Vector3& f : corner_forces) {
        mean += f;
    }
    mean /= static_cast<double>(corner_forces.size());
    double cost = 0.0;
    for (const Vector3& f : corner_forces) {
        cost += detail::half_weighted_square(mean - f, weight);
    }
    return cost;
}

inline double force_rate_cost(const Vector3& force, const Vector3& next_force, double sampling_time,
                              const Vector3& weight)
{
    if (!(sampling_time > 0.0)) {
        throw ConfigError("force_rate_cost: sampling time must be positive");
    }
    return detail::half_weighted_square((next_force - force) / sampling_time, weight);
}

inline double centroidal_tracking_cost(const CentroidalState& state, const Vector3& nominal_angular_momentum,
                                       const Vector3& nominal_com, const Vector3& angular_weight,
                                       const Vector3& com_weight)
{
    return detail::half_weighted_square(nominal_angular_momentum - state.angular_momentum, angular_weight)
         + detail::half_weighted_square(nominal_com - state.com_position, com_weight);
}

inline double contact_regularization_cost(const Vector3& position, const Vector3& nominal, const Vector3& weight)
{
    return detail::half_weighted_square(nominal - position, weight);
}

// ---- decision layout --------------------------------------------------------

/// Flat index map of the decision vector.
class DecisionLayout {
public:
    DecisionLayout() = default;
    DecisionLayout(int horizon, std::vector<int> corners_per_contact)
        : horizon_(horizon), corners_(std::move(corners_per_contact))
    {
        if (horizon_ < 1) {
            throw StructuralError("DecisionLayout: horizon must be >= 1");
        }
        if (corners_.empty()) {
            throw StructuralError("DecisionLayout: need at least one contact");
        }
        force_offset_.resize(corners_.size());
        int off = 0;
        for (std::size_t i = 0; i < corners_.size(); ++i) {
            if (corners_[i] < 1) {
                throw StructuralError("DecisionLayout: every contact needs at least one corner");
            }
            force_offset_[i] = off;
            off += 3 * corners_[i];
        }
        total_corners_ = off / 3;
        state_size_ = 9 + 3 * num_contacts();
        control_size_ = 3 * total_corners_ + 3 * num_contacts();
    }

    [[nodiscard]] int horizon() const { return horizon_; }
    [[nodiscard]] int num_contacts() const { return static_cast<int>(corners_.size()); }
    [[nodiscard]] int corners(int i) const { return corners_[static_cast<std::size_t>(i)]; }
    [[nodiscard]] const std::vector<int>& corners() const { return corners_; }
    [[nodiscard]] int total_corners() const { return total_corners_; }
    [[nodiscard]] Index state_size() const { return state_size_; }
    [[nodiscard]] Index control_size() const { return control_size_; }
    [[nodiscard]] Index size() const
    {
        return (horizon_ + 1) * state_size_ + horizon_ * control_size_;
    }

    [[nodiscard]] Index state(int k) const { return k * (state_size_ + control_size_); }
    [[nodiscard]] Index control(int k) const { return state(k) + state_size_; }

    [[nodiscard]] Index com(int k) const { return state(k); }
    [[nodiscard]] Index momentum(int k) const { return state(k) + 3; }
    [[nodiscard]] Index linear_momentum(int k) const { return state(k) + 3; }
    [[nodiscard]] Index angular_momentum(int k) const { return state(k) + 6; }
    [[nodiscard]] Index contact_position(int k, int i) const { return state(k) + 9 + 3 * i; }
    [[nodiscard]] Index force(int k, int i, int j) const
    {
        return control(k) + force_offset_[static_cast<std::size_t>(i)] + 3 * j;
    }
    [[nodiscard]] Index contact_velocity(int k, int i) const { return control(k) + 3 * total_corners_ + 3 * i; }

    bool operator==(const DecisionLayout& o) const
    {
        return horizon_ == o.horizon_ && corners_ == o.corners_;
    }

private:
    int horizon_{0};
    std::vector<int> corners_;
    std::vector<int> force_offset_;
    int total_corners_{0};
    Index state_size_{0};
    Index control_size_{0};
};

/// Structured view of a decision vector.
struct DecisionTrajectory {
    struct Knot {
        CentroidalState state;
        std::vector<Vector3> contact_positions;
    };
    struct Control {
        std::vector<std::vector<Vector3>> corner_forces;   // [contact][corner]
        std::vector<Vector3> contact_velocities;
    };
    std::vector<Knot> knots;        // N + 1
    std::vector<Control> controls;  // N
};

inline DecisionTrajectory unpack(const DecisionLayout& layout, const VectorX& x)
{
    if (x.size() != layout.size()) {
        throw StructuralError("unpack: decision vector size does not match layout");
    }
    const int n = layout.horizon();
    const int nc = layout.num_contacts();
    DecisionTrajectory traj;
    traj.knots.resize(static_cast<std::size_t>(n + 1));
    traj.controls.resize(static_cast<std::size_t>(n));
    for (int k = 0; k <= n; ++k) {
        auto& knot = traj.knots[static_cast<std::size_t>(k)];
        knot.state.com_position = x.segment<3>(layout.com(k));
        knot.state.linear_momentum = x.segment<3>(layout.linear_momentum(k));
        knot.state.angular_momentum = x.segment<3>(layout.angular_momentum(k));
        for (int i = 0; i < nc; ++i) {
            knot.contact_positions.push_back(x.segment<3>(layout.contact_position(k, i)));
        }
        if (k == n) {
            break;
        }
        auto& u = traj.controls[static_cast<std::size_t>(k)];
        u.corner_forces.resize(static_cast<std::size_t>(nc));
        for (int i = 0; i < nc; ++i) {
            for (int j = 0; j < layout.corners(i); ++j) {
                u.corner_forces[static_cast<std::size_t>(i)].push_back(x.segment<3>(layout.force(k, i, j)));
            }
            u.contact_velocities.push_back(x.segment<3>(layout.contact_velocity(k, i)));
        }
    }
    return traj;
}

// ---- problem data ---------------------------------------------------------------

/// Everything the transcription needs for one MPC solve. Per-knot data are
/// precomputed by the caller; the transcription never touches the plan spline.
struct TranscriptionSetup {
    PhysicalParams params;
    std::vector<ContactGeometry> geometry;
    int horizon{0};
    double sampling_time{0.0};
    ContactSchedule schedule;                                  // horizon x n_c
    CentroidalState initial_state;
    std::vector<std::optional<Vector3>> pinned_contacts;       // n_c; set for contacts pinned at knot 0
    std::vector<Vector3> nominal_com;                          // horizon + 1
    std::vector<std::vector<Vector3>> nominal_contacts;        // (horizon + 1) x n_c
    std::vector<std::vector<Matrix3>> contact_orientations;    // (horizon + 1) x n_c
    std::vector<ExternalWrench> disturbance;                   // horizon
    Weights weights;
    FrictionPyramid pyramid{friction_pyramid(0.8, 0.0, 3.0 * 9.81)};
    ContactBox box;
    Vector3 nominal_angular_momentum{Vector3::Zero()};

    [[nodiscard]] int num_contacts() const { return static_cast<int>(geometry.size()); }

    [[nodiscard]] DecisionLayout layout() const
    {
        std::vector<int> corners;
        for (const ContactGeometry& g : geometry) {
            corners.push_back(g.size());
        }
        return DecisionLayout(horizon, std::move(corners));
    }

    /// True when the position of contact i at knot k is a free variable that
    /// carries its own box constraint (not pinned, not frozen by the knot before).
    [[nodiscard]] bool box_constrained(int k, int i) const
    {
        if (k == 0) {
            return !pinned_contacts[static_cast<std::size_t>(i)].has_value();
        }
        return !schedule(k - 1, i);
    }

    void validate() const
    {
        params.validate();
        weights.validate();
        box.validate();
        const int nc = num_contacts();
        const auto n1 = static_cast<std::size_t>(horizon + 1);
        if (horizon < 1 || !(sampling_time > 0.0)) {
            throw StructuralError("TranscriptionSetup: need horizon >= 1 and sampling time > 0");
        }
        if (nc < 1) {
            throw StructuralError("TranscriptionSetup: no contacts");
        }
        if (schedule.knots() != horizon || schedule.contacts() != nc) {
            throw StructuralError("TranscriptionSetup: schedule must have horizon rows and one column per contact");
        }
        if (nominal_com.size() != n1 || nominal_contacts.size() != n1 || contact_orientations.size() != n1) {
            throw StructuralError("TranscriptionSetup: nominal samples must cover horizon + 1 knots");
        }
        for (std::size_t k = 0; k < n1; ++k) {
            if (nominal_contacts[k].size() != static_cast<std::size_t>(nc)
                || contact_orientations[k].size() != static_cast<std::size_t>(nc)) {
                throw StructuralError("TranscriptionSetup: per-knot contact data has the wrong size");
            }
        }
        if (disturbance.size() != static_cast<std::size_t>(horizon)) {
            throw StructuralError("TranscriptionSetup: disturbance profile must have horizon entries");
        }
        if (pinned_contacts.size() != static_cast<std::size_t>(nc)) {
            throw StructuralError("TranscriptionSetup: pinned contact list has the wrong size");
        }
        if (!initial_state.is_finite()) {
            throw InputError("TranscriptionSetup: non-finite initial state");
        }
    }
};

/// Per-knot nominal contact poses. The position variable at knot k belongs
/// to the phase that was active at knot k-1 when the contact was active
/// there (it is frozen by the contact dynamics); otherwise to the phase
/// active at knot k or the next upcoming one.
inline void fill_contact_references(const ContactPlan& plan, const ContactSchedule& schedule, double t0,
                                    double sampling_time, TranscriptionSetup& setup)
{
    const int n = schedule.knots();
    const int nc = plan.num_contacts();
    setup.nominal_contacts.assign(static_cast<std::size_t>(n + 1), std::vector<Vector3>(static_cast<std::size_t>(nc)));
    setup.contact_orientations.assign(static_cast<std::size_t>(n + 1),
                                      std::vector<Matrix3>(static_cast<std::size_t>(nc)));
    for (int k = 0; k <= n; ++k) {
        for (int i = 0; i < nc; ++i) {
            const int knot = (k > 0 && schedule(k - 1, i)) ? k - 1 : k;
            const ContactPhase& ph = plan.reference_phase(i, knot_query_time(plan, t0, knot, sampling_time));
            setup.nominal_contacts[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)] = ph.position;
            setup.contact_orientations[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)] = ph.orientation;
        }
    }
}

/// Evaluates cost, constraints and their derivatives for one setup.
class CentroidalTranscription {
public:
    explicit CentroidalTranscription(TranscriptionSetup setup) : setup_(std::move(setup))
    {
        setup_.validate();
        layout_ = setup_.layout();
        build_cost();
        count_constraints();
    }

    [[nodiscard]] const TranscriptionSetup& setup() const { return setup_; }
    [[nodiscard]] const DecisionLayout& layout() const { return layout_; }
    [[nodiscard]] Index num_variables() const { return layout_.size(); }
    [[nodiscard]] Index num_equalities() const { return num_eq_; }
    [[nodiscard]] Index num_inequalities() const { return num_ineq_; }
    [[nodiscard]] Index num_pin_rows() const { return num_pin_; }
    [[nodiscard]] Index num_defect_rows() const
    {
        return static_cast<Index>(setup_.horizon) * (9 + 3 * setup_.num_contacts());
    }

    // ---- cost ----

    [[nodiscard]] VectorX cost_residual(const VectorX& x) const { return residual_jacobian_ * x + residual_offset_; }

    [[nodiscard]] double cost(const VectorX& x) const
    {
        check_size(x);
        const VectorX r = cost_residual(x);
        long double sum = 0.0L;
        for (Index i = 0; i < r.size(); ++i) {
            sum += static_cast<long double>(r(i)) * r(i);
        }
        return static_cast<double>(0.5L * sum);
    }

    [[nodiscard]] VectorX cost_gradient(const VectorX& x) const
    {
        check_size(x);
        return residual_jacobian_.transpose() * cost_residual(x);
    }

    [[nodiscard]] const SparseMatrix& cost_hessian() const { return hessian_; }

    /// Same cost, summed from the individual term functions.
    [[nodiscard]] double cost_by_terms(const VectorX& x) const
    {
        const DecisionTrajectory traj = unpack(layout_, x);
        const Weights& w = setup_.weights;
        const int n = setup_.horizon;
        double total = 0.0;
        for (int k = 0; k <= n; ++k) {
            const auto& knot = traj.knots[static_cast<std::size_t>(k)];
            total += centroidal_tracking_cost(knot.state, setup_.nominal_angular_momentum,
                                              setup_.nominal_com[static_cast<std::size_t>(k)],
                                              w.angular_momentum, w.com_tracking);
            for (int i = 0; i < setup_.num_contacts(); ++i) {
                total += contact_regularization_cost(
                    knot.contact_positions[static_cast<std::size_t>(i)],
                    setup_.nominal_contacts[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)],
                    w.contact_regularization);
            }
        }
        for (int k = 0; k < n; ++k) {
            const auto& u = traj.controls[static_cast<std::size_t>(k)];
            for (int i = 0; i < setup_.num_contacts(); ++i) {
                const auto& fi = u.corner_forces[static_cast<std::size_t>(i)];
                total += force_regularization_cost(fi, w.force_regularization);
                if (k + 1 < n) {
                    const auto& fn = traj.controls[static_cast<std::size_t>(k + 1)].corner_forces[static_cast<std::size_t>(i)];
                    for (std::size_t j = 0; j < fi.size(); ++j) {
                        total += force_rate_cost(fi[j], fn[j], setup_.sampling_time, w.force_rate);
                    }
                }
            }
        }
        return total;
    }

    // ---- equalities ----

    [[nodiscard]] VectorX equalities(const VectorX& x) const
    {
        check_size(x);
        VectorX c(num_eq_);
        Index row = 0;
        const auto& s = setup_;
        const int n = s.horizon;
        const int nc = s.num_contacts();
        const double dt = s.sampling_time;

        c.segment<3>(row) = x.segment<3>(layout_.com(0)) - s.initial_state.com_position;
        c.segment<3>(row + 3) = x.segment<3>(layout_.linear_momentum(0)) - s.initial_state.linear_momentum;
        c.segment<3>(row + 6) = x.segment<3>(layout_.angular_momentum(0)) - s.initial_state.angular_momentum;
        row += 9;
        for (int i = 0; i < nc; ++i) {
            if (const auto& pin = s.pinned_contacts[static_cast<std::size_t>(i)]) {
                c.segment<3>(row) = x.segment<3>(layout_.contact_position(0, i)) - *pin;
                row += 3;
            }
        }

        for (int k = 0; k < n; ++k) {
            const Vector3 pcom = x.segment<3>(layout_.com(k));
            Vector3 force = s.params.mass * s.params.gravity + s.disturbance[static_cast<std::size_t>(k)].force;
            Vector3 torque = s.disturbance[static_cast<std::size_t>(k)].torque_about_com;
            for (int i = 0; i < nc; ++i) {
                if (!s.schedule(k, i)) {
                    continue;
                }
                const Vector3 pc = x.segment<3>(layout_.contact_position(k, i));
                const Matrix3& rot = s.contact_orientations[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)];
                const auto& corners = s.geometry[static_cast<std::size_t>(i)].corners;
                for (int j = 0; j < layout_.corners(i); ++j) {
                    const Vector3 f = x.segment<3>(layout_.force(k, i, j));
                    const Vector3 arm = pc + rot * corners[static_cast<std::size_t>(j)] - pcom;
                    force += f;
                    torque += arm.cross(f);
                }
            }
            c.segment<3>(row) = x.segment<3>(layout_.linear_momentum(k + 1)) - x.segment<3>(layout_.linear_momentum(k))
                              - dt * force;
            c.segment<3>(row + 3) = x.segment<3>(layout_.angular_momentum(k + 1))
                                  - x.segment<3>(layout_.angular_momentum(k)) - dt * torque;
            c.segment<3>(row + 6) = x.segment<3>(layout_.com(k + 1)) - pcom
                                  - dt * (x.segment<3>(layout_.linear_momentum(k)) / s.params.mass);
            row += 9;
            for (int i = 0; i < nc; ++i) {
                Vector3 d = x.segment<3>(layout_.contact_position(k + 1, i)) - x.segment<3>(layout_.contact_position(k, i));
                if (!s.schedule(k, i)) {
                    d -= dt * x.segment<3>(layout_.contact_velocity(k, i));
                }
                c.segment<3>(row) = d;
                row += 3;
            }
        }

        for_each_box_row([&](int k, int i, int axis, BoxRow kind) {
            if (kind != BoxRow::equal) {
                return;
            }
            c(row++) = box_residual(x, k, i)(axis) - s.box.lower(axis);
        });
        return c;
    }

    [[nodiscard]] SparseMatrix equality_jacobian(const VectorX& x) const
    {
        check_size(x);
        std::vector<Triplet> t;
        t.reserve(static_cast<std::size_t>(num_eq_) * 8);
        Index row = 0;
        const auto& s = setup_;
        const int n = s.horizon;
        const int nc = s.num_contacts();
        const double dt = s.sampling_time;

        const auto add_block = [&t](Index r, Index c, const Matrix3& m) {
            for (int a = 0; a < 3; ++a) {
                for (int b = 0; b < 3; ++b) {
                    t.emplace_back(r + a, c + b, m(a, b));
                }
            }
        };
        const auto add_diag = [&t](Index r, Index c, double v) {
            for (int a = 0; a < 3; ++a) {
                t.emplace_back(r + a, c + a, v);
            }
        };

        for (int a = 0; a < 9; ++a) {
            t.emplace_back(row + a, layout_.state(0) + a, 1.0);
        }
        row += 9;
        for (int i = 0; i < nc; ++i) {
            if (s.pinned_contacts[static_cast<std::size_t>(i)]) {
                add_diag(row, layout_.contact_position(0, i), 1.0);
                row += 3;
            }
        }

        for (int k = 0; k < n; ++k) {
            const Vector3 pcom = x.segment<3>(layout_.com(k));
            // linear momentum defect
            add_diag(row, layout_.linear_momentum(k + 1), 1.0);
            add_diag(row, layout_.linear_momentum(k), -1.0);
            // angular momentum defect
            add_diag(row + 3, layout_.angular_momentum(k + 1), 1.0);
            add_diag(row + 3, layout_.angular_momentum(k), -1.0);
            Vector3 total_force = Vector3::Zero();
            for (int i = 0; i < nc; ++i) {
                if (!s.schedule(k, i)) {
                    continue;
                }
                const Vector3 pc = x.segment<3>(layout_.contact_position(k, i));
                const Matrix3& rot = s.contact_orientations[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)];
                const auto& corners = s.geometry[static_cast<std::size_t>(i)].corners;
                Vector3 contact_force = Vector3::Zero();
                for (int j = 0; j < layout_.corners(i); ++j) {
                    const Index fidx = layout_.force(k, i, j);
                    const Vector3 f = x.segment<3>(fidx);
                    const Vector3 arm = pc + rot * corners[static_cast<std::size_t>(j)] - pcom;
                    add_diag(row, fidx, -dt);
                    add_block(row + 3, fidx, -dt * hat(arm));
                    contact_force += f;
                }
                // d(arm x f)/d(p_C) = -hat(f)
                add_block(row + 3, layout_.contact_position(k, i), dt * hat(contact_force));
                total_force += contact_force;
            }
            // d(arm x f)/d(p_com) = hat(f)
            add_block(row + 3, layout_.com(k), -dt * hat(total_force));
            // CoM defect
            add_diag(row + 6, layout_.com(k + 1), 1.0);
            add_diag(row + 6, layout_.com(k), -1.0);
            add_diag(row + 6, layout_.linear_momentum(k), -dt / s.params.mass);
            row += 9;
            for (int i = 0; i < nc; ++i) {
                add_diag(row, layout_.contact_position(k + 1, i), 1.0);
                add_diag(row, layout_.contact_position(k, i), -1.0);
                if (!s.schedule(k, i)) {
                    add_diag(row, layout_.contact_velocity(k, i), -dt);
                }
                row += 3;
            }
        }

        for_each_box_row([&](int k, int i, int axis, BoxRow kind) {
            if (kind != BoxRow::equal) {
                return;
            }
            append_box_gradient(t, row++, k, i, axis, 1.0);
        });

        SparseMatrix jac(num_eq_, layout_.size());
        jac.setFromTriplets(t.begin(), t.end());
        return jac;
    }

    /// Sum of y_r times the Hessian of equality row r. Only the angular
    /// momentum defects are nonlinear (bilinear in arm and force), so the
    /// result does not depend on x.
    [[nodiscard]] SparseMatrix constraint_curvature(const VectorX& y) const
    {
        if (y.size() != num_eq_) {
            throw StructuralError("transcription: multiplier vector has the wrong size");
        }
        const auto& s = setup_;
        const int nc = s.num_contacts();
        const double dt = s.sampling_time;
        std::vector<Triplet> t;
        Index row = 9;
        for (int i = 0; i < nc; ++i) {
            row += s.pinned_contacts[static_cast<std::size_t>(i)] ? 3 : 0;
        }
        const auto add_pair = [&t](Index r, Index c, const Matrix3& m) {
            for (int a = 0; a < 3; ++a) {
                for (int b = 0; b < 3; ++b) {
                    t.emplace_back(r + a, c + b, m(a, b));
                    t.emplace_back(c + b, r + a, m(a, b));
                }
            }
        };
        for (int k = 0; k < s.horizon; ++k, row += 9 + 3 * nc) {
            const Matrix3 block = dt * hat(Vector3(y.segment<3>(row + 3)));
            for (int i = 0; i < nc; ++i) {
                if (!s.schedule(k, i)) {
                    continue;
                }
                for (int j = 0; j < layout_.corners(i); ++j) {
                    add_pair(layout_.contact_position(k, i), layout_.force(k, i, j), block);
                    add_pair(layout_.com(k), layout_.force(k, i, j), -block);
                }
            }
        }
        SparseMatrix h(layout_.size(), layout_.size());
        h.setFromTriplets(t.begin(), t.end());
        return h;
    }

    // ---- inequalities (c_I(x) <= 0) ----

    [[nodiscard]] VectorX inequalities(const VectorX& x) const
    {
        check_size(x);
        VectorX c(num_ineq_);
        Index row = 0;
        const auto& s = setup_;
        for (int k = 0; k < s.horizon; ++k) {
            for (int i = 0; i < s.num_contacts(); ++i) {
                const Matrix3& rot = s.contact_orientations[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)];
                for (int j = 0; j < layout_.corners(i); ++j) {
                    c.segment<6>(row) = s.pyramid.residual(rot, x.segment<3>(layout_.force(k, i, j)));
                    row += 6;
                }
            }
        }
        for_each_box_row([&](int k, int i, int axis, BoxRow kind) {
            if (kind == BoxRow::upper) {
                c(row++) = box_residual(x, k, i)(axis) - s.box.upper(axis);
            } else if (kind == BoxRow::lower) {
                c(row++) = s.box.lower(axis) - box_residual(x, k, i)(axis);
            }
        });
        return c;
    }

    [[nodiscard]] SparseMatrix inequality_jacobian(const VectorX& x) const
    {
        check_size(x);
        std::vector<Triplet> t;
        t.reserve(static_cast<std::size_t>(num_ineq_) * 3);
        Index row = 0;
        const auto& s = setup_;
        for (int k = 0; k < s.horizon; ++k) {
            for (int i = 0; i < s.num_contacts(); ++i) {
                const Matrix3& rot = s.contact_orientations[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)];
                const Eigen::Matrix<double, 6, 3> a = s.pyramid.A * rot.transpose();
                for (int j = 0; j < layout_.corners(i); ++j) {
                    const Index fidx = layout_.force(k, i, j);
                    for (int r = 0; r < 6; ++r) {
                        for (int col = 0; col < 3; ++col) {
                            t.emplace_back(row + r, fidx + col, a(r, col));
                        }
                    }
                    row += 6;
                }
            }
        }
        for_each_box_row([&](int k, int i, int axis, BoxRow kind) {
            if (kind == BoxRow::upper) {
                append_box_gradient(t, row++, k, i, axis, 1.0);
            } else if (kind == BoxRow::lower) {
                append_box_gradient(t, row++, k, i, axis, -1.0);
            }
        });
        SparseMatrix jac(num_ineq_, layout_.size());
        jac.setFromTriplets(t.begin(), t.end());
        return jac;
    }

private:
    enum class BoxRow { equal, upper, lower };

    void check_size(const VectorX& x) const
    {
        if (x.size() != layout_.size()) {
            throw StructuralError("transcription: decision vector has size " + std::to_string(x.size())
                                  + ", expected " + std::to_string(layout_.size()));
        }
    }

    [[nodiscard]] Vector3 box_residual(const VectorX& x, int k, int i) const
    {
        const auto ks = static_cast<std::size_t>(k);
        const auto is = static_cast<std::size_t>(i);
        return setup_.contact_orientations[ks][is].transpose()
             * (setup_.nominal_contacts[ks][is] - x.segment<3>(layout_.contact_position(k, i)));
    }

    // d(R^T (p_n - p))_axis / dp = -R^T.row(axis)
    void append_box_gradient(std::vector<Triplet>& t, Index row, int k, int i, int axis, double sign) const
    {
        const Matrix3& rot = setup_.contact_orientations[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)];
        const Index col = layout_.contact_position(k, i);
        for (int b = 0; b < 3; ++b) {
            t.emplace_back(row, col + b, -sign * rot(b, axis));
        }
    }

    template <typename F>
    void for_each_box_row(F&& visit) const
    {
        const auto& box = setup_.box;
        for (int k = 0; k <= setup_.horizon; ++k) {
            for (int i = 0; i < setup_.num_contacts(); ++i) {
                if (!setup_.box_constrained(k, i)) {
                    continue;
                }
                for (int axis = 0; axis < 3; ++axis) {
                    if (box.lower(axis) == box.upper(axis)) {
                        visit(k, i, axis, BoxRow::equal);
                        continue;
                    }
                    if (std::isfinite(box.upper(axis))) {
                        visit(k, i, axis, BoxRow::upper);
                    }
                    if (std::isfinite(box.lower(axis))) {
                        visit(k, i, axis, BoxRow::lower);
                    }
                }
            }
        }
    }

    void count_constraints()
    {
        num_pin_ = 9;
        for (const auto& pin : setup_.pinned_contacts) {
            if (pin) {
                num_pin_ += 3;
            }
        }
        Index box_eq = 0;
        Index box_ineq = 0;
        for_each_box_row([&](int, int, int, BoxRow kind) {
            if (kind == BoxRow::equal) {
                ++box_eq;
            } else {
                ++box_ineq;
            }
        });
        num_eq_ = num_pin_ + num_defect_rows() + box_eq;
        num_ineq_ = 6 * static_cast<Index>(setup_.horizon) * layout_.total_corners() + box_ineq;
    }

    // Residual r(x) = M x + r0 stacking sqrt(W) * (term error) for every cost term.
    void build_cost()
    {
        const auto& s = setup_;
        const Weights& w = s.weights;
        const int n = s.horizon;
        const int nc = s.num_contacts();
        std::vector<Triplet> t;
        std::vector<double> offset;
        Index row = 0;

        const Vector3 sw_f = w.force_regularization.cwiseSqrt();
        const Vector3 sw_fd = w.force_rate.cwiseSqrt() / s.sampling_time;
        const Vector3 sw_h = w.angular_momentum.cwiseSqrt();
        const Vector3 sw_com = w.com_tracking.cwiseSqrt();
        const Vector3 sw_p = w.contact_regularization.cwiseSqrt();

        // sqrt(W) (nominal - x)
        const auto tracking = [&](Index col, const Vector3& sw, const Vector3& nominal) {
            for (int a = 0; a < 3; ++a) {
                t.emplace_back(row + a, col + a, -sw(a));
                offset.push_back(sw(a) * nominal(a));
            }
            row += 3;
        };

        for (int k = 0; k <= n; ++k) {
            tracking(layout_.angular_momentum(k), sw_h, s.nominal_angular_momentum);
            tracking(layout_.com(k), sw_com, s.nominal_com[static_cast<std::size_t>(k)]);
            for (int i = 0; i < nc; ++i) {
                tracking(layout_.contact_position(k, i), sw_p,
                         s.nominal_contacts[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)]);
            }
        }
        for (int k = 0; k < n; ++k) {
            for (int i = 0; i < nc; ++i) {
                const int nv = layout_.corners(i);
                if (nv > 1) {
                    // sqrt(W) (mean_w f_iw - f_ij)
                    for (int j = 0; j < nv; ++j) {
                        for (int a = 0; a < 3; ++a) {
                            for (int jw = 0; jw < nv; ++jw) {
                                const double coeff = (jw == j ? 1.0 / nv - 1.0 : 1.0 / nv) * sw_f(a);
                                t.emplace_back(row + a, layout_.force(k, i, jw) + a, coeff);
                            }
                            offset.push_back(0.0);
                        }
                        row += 3;
                    }
                }
                if (k + 1 < n) {
                    for (int j = 0; j < nv; ++j) {
                        for (int a = 0; a < 3; ++a) {
                            t.emplace_back(row + a, layout_.force(k + 1, i, j) + a, sw_fd(a));
                            t.emplace_back(row + a, layout_.force(k, i, j) + a, -sw_fd(a));
                            offset.push_back(0.0);
                        }
                        row += 3;
                    }
                }
            }
        }
        residual_jacobian_.resize(row, layout_.size());
        residual_jacobian_.setFromTriplets(t.begin(), t.end());
        residual_offset_ = Eigen::Map<const VectorX>(offset.data(), static_cast<Index>(offset.size()));
        hessian_ = (residual_jacobian_.transpose() * residual_jacobian_).pruned();
    }

    TranscriptionSetup setup_;
    DecisionLayout layout_;
    SparseMatrix residual_jacobian_;
    VectorX residual_offset_;
    SparseMatrix hessian_;
    Index num_pin_{0};
    Index num_eq_{0};
    Index num_ineq_{0};
};

/// Wraps a transcription into the solver's callback interface. The
/// transcription is shared, so the callbacks stay valid after copying.
inline NlpProblem make_nlp(std::shared_ptr<const CentroidalTranscription> tr)
{
    NlpProblem p;
    p.num_variables = tr->num_variables();
    p.num_equalities = tr->num_equalities();
    p.num_inequalities = tr->num_inequalities();
    p.cost = [tr](const VectorX& x) { return tr->cost(x); };
    p.cost_gradient = [tr](const VectorX& x) { return tr->cost_gradient(x); };
    p.cost_hessian = [tr](const VectorX&) { return tr->cost_hessian(); };
    p.equalities = [tr](const VectorX& x) { return tr->equalities(x); };
    p.equality_jacobian = [tr](const VectorX& x) { return tr->equality_jacobian(x); };
    p.constraint_curvature = [tr](const VectorX&, const VectorX& y, const VectorX&) {
        return tr->constraint_curvature(y);
    };
    p.inequalities = [tr](const VectorX& x) { return tr->inequalities(x); };
    p.inequality_jacobian = [tr](const VectorX& x) { return tr->inequality_jacobian(x); };
    return p;
}

inline NlpProblem build_nlp(TranscriptionSetup setup)
{
    return make_nlp(std::make_shared<const CentroidalTranscription>(std::move(setup)));
}

}  // namespace centroidal_mpc
