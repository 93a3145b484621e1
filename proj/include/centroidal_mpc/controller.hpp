#pragma once

// Receding-horizon loop around the centroidal transcription: build the NLP
// for the current time and state, solve it from the shifted previous
// solution, and extract the knot-0 contact forces and upcoming landing
// positions.

#include "centroidal_mpc/model.hpp"
#include "centroidal_mpc/plan.hpp"
#include "centroidal_mpc/sqp.hpp"
#include "centroidal_mpc/transcription.hpp"

#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <vector>

namespace centroidal_mpc {

struct MpcOptions {
    int horizon{30};
    double sampling_time{0.1};
    Weights weights;
    double friction_coefficient{0.8};
    double normal_force_min{0.0};
    /// NaN selects 3 m |g|.
    double normal_force_max{std::numeric_limits<double>::quiet_NaN()};
    ContactBox box;
    Vector3 nominal_angular_momentum{Vector3::Zero()};
    ComReferencePolicy com_reference;
    SolverOptions solver;

    [[nodiscard]] FrictionPyramid pyramid(const PhysicalParams& params) const
    {
        const double fmax = std::isnan(normal_force_max) ? 3.0 * params.mass * params.gravity.norm() : normal_force_max;
        return friction_pyramid(friction_coefficient, normal_force_min, fmax);
    }

    void validate(const PhysicalParams& params) const
    {
        if (horizon < 2) {
            throw ConfigError("mpc.horizon_knots must be >= 2");
        }
        if (!(sampling_time > 0.0) || !std::isfinite(sampling_time)) {
            throw ConfigError("mpc.sampling_time_s must be positive");
        }
        weights.validate();
        box.validate();
        solver.validate();
        (void)pyramid(params);
    }
};

struct MpcOutput {
    std::vector<std::vector<Vector3>> corner_forces;          // knot 0; zero for inactive contacts
    std::vector<std::optional<Vector3>> adjusted_contacts;    // current stance or next landing position
    std::vector<int> landing_knot;                            // knot of adjusted_contacts, -1 if none
    std::vector<CentroidalState> predicted;                   // model rollout of the optimal controls
    std::vector<std::vector<Vector3>> predicted_contacts;     // [knot][contact]
    ContactSchedule schedule;
    Solution solution;
    bool degraded{false};
    bool reused_previous_control{false};
};

/// Knot k takes knot k+1's values; the last state and control are repeated.
inline VectorX shift_warm_start(const VectorX& previous, const DecisionLayout& layout, int steps = 1)
{
    if (previous.size() != layout.size()) {
        throw StructuralError("shift_warm_start: previous solution does not match the layout");
    }
    if (steps < 0) {
        throw StructuralError("shift_warm_start: negative shift");
    }
    VectorX out = previous;
    const int n = layout.horizon();
    const Index nx = layout.state_size();
    const Index nu = layout.control_size();
    for (int s = 0; s < steps; ++s) {
        const VectorX src = out;
        for (int k = 0; k < n; ++k) {
            out.segment(layout.state(k), nx) = src.segment(layout.state(k + 1), nx);
        }
        for (int k = 0; k + 1 < n; ++k) {
            out.segment(layout.control(k), nu) = src.segment(layout.control(k + 1), nu);
        }
    }
    return out;
}

/// Nominal CoM at every knot, contacts at their nominal positions, everything else zero.
inline VectorX cold_start(const TranscriptionSetup& setup)
{
    const DecisionLayout layout = setup.layout();
    VectorX x = VectorX::Zero(layout.size());
    for (int k = 0; k <= layout.horizon(); ++k) {
        x.segment<3>(layout.com(k)) = setup.nominal_com[static_cast<std::size_t>(k)];
        for (int i = 0; i < layout.num_contacts(); ++i) {
            x.segment<3>(layout.contact_position(k, i)) =
                setup.nominal_contacts[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)];
        }
    }
    return x;
}

/// Builds the transcription setup for the horizon starting at t. The
/// disturbance is either one wrench held over the horizon or one per knot.
inline TranscriptionSetup make_setup(const CentroidalState& current, std::span<const Vector3> contact_positions,
                                     const ContactPlan& plan, const QuinticSpline& nominal_com,
                                     const PhysicalParams& params, double t,
                                     std::span<const ExternalWrench> disturbance, const MpcOptions& options)
{
    const int nc = plan.num_contacts();
    if (contact_positions.size() != static_cast<std::size_t>(nc)) {
        throw StructuralError("mpc: expected " + std::to_string(nc) + " contact positions");
    }
    TranscriptionSetup s;
    s.params = params;
    s.geometry = plan.geometries();
    s.horizon = options.horizon;
    s.sampling_time = options.sampling_time;
    s.schedule = horizon_schedule(plan, t, options.horizon, options.sampling_time);
    s.initial_state = current;
    s.pinned_contacts.resize(static_cast<std::size_t>(nc));
    for (int i = 0; i < nc; ++i) {
        if (s.schedule(0, i)) {
            s.pinned_contacts[static_cast<std::size_t>(i)] = contact_positions[static_cast<std::size_t>(i)];
        }
    }
    for (int k = 0; k <= options.horizon; ++k) {
        s.nominal_com.push_back(nominal_com(t + k * options.sampling_time));
    }
    fill_contact_references(plan, s.schedule, t, options.sampling_time, s);
    if (disturbance.size() == 1) {
        s.disturbance.assign(static_cast<std::size_t>(options.horizon), disturbance.front());
    } else if (disturbance.size() == static_cast<std::size_t>(options.horizon)) {
        s.disturbance.assign(disturbance.begin(), disturbance.end());
    } else {
        throw StructuralError("mpc: disturbance profile needs 1 or " + std::to_string(options.horizon) + " entries");
    }
    s.weights = options.weights;
    s.pyramid = options.pyramid(params);
    s.box = options.box;
    s.nominal_angular_momentum = options.nominal_angular_momentum;
    return s;
}

namespace detail {

inline std::vector<std::vector<Vector3>> knot_forces(const DecisionLayout& layout, const VectorX& x, int k,
                                                     const ContactSchedule& schedule)
{
    std::vector<std::vector<Vector3>> forces(static_cast<std::size_t>(layout.num_contacts()));
    for (int i = 0; i < layout.num_contacts(); ++i) {
        for (int j = 0; j < layout.corners(i); ++j) {
            forces[static_cast<std::size_t>(i)].push_back(schedule(k, i) ? Vector3(x.segment<3>(layout.force(k, i, j)))
                                                                         : Vector3::Zero());
        }
    }
    return forces;
}

}  // namespace detail

/// Explicit-Euler rollout of a decision vector's controls from its knot-0 state.
inline std::vector<CentroidalState> rollout(const TranscriptionSetup& setup, const VectorX& x)
{
    const DecisionLayout layout = setup.layout();
    const DecisionTrajectory traj = unpack(layout, x);
    std::vector<CentroidalState> states{traj.knots.front().state};
    for (int k = 0; k < setup.horizon; ++k) {
        std::vector<ContactInstant> contacts(static_cast<std::size_t>(layout.num_contacts()));
        for (int i = 0; i < layout.num_contacts(); ++i) {
            auto& c = contacts[static_cast<std::size_t>(i)];
            c.position = traj.knots[static_cast<std::size_t>(k)].contact_positions[static_cast<std::size_t>(i)];
            c.orientation = setup.contact_orientations[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)];
            c.active = setup.schedule(k, i);
            c.corner_forces = traj.controls[static_cast<std::size_t>(k)].corner_forces[static_cast<std::size_t>(i)];
            c.velocity = traj.controls[static_cast<std::size_t>(k)].contact_velocities[static_cast<std::size_t>(i)];
        }
        states.push_back(integrate_step(states.back(), contacts, setup.geometry, setup.params,
                                        setup.disturbance[static_cast<std::size_t>(k)], setup.sampling_time)
                             .state);
    }
    return states;
}

/// One receding-horizon step. Never throws on solver trouble: the output is
/// flagged degraded and, on solver failure, the previous plan's next control is reused.
inline MpcOutput mpc_step(const CentroidalState& current, std::span<const Vector3> contact_positions,
                          const ContactPlan& plan, const QuinticSpline& nominal_com, const PhysicalParams& params,
                          double t, std::span<const ExternalWrench> disturbance_estimate, const Solution* previous,
                          const MpcOptions& options)
{
    TranscriptionSetup setup =
        make_setup(current, contact_positions, plan, nominal_com, params, t, disturbance_estimate, options);
    auto transcription = std::make_shared<const CentroidalTranscription>(setup);
    const DecisionLayout& layout = transcription->layout();
    const NlpProblem nlp = make_nlp(transcription);

    const bool warm = previous != nullptr && previous->x.size() == layout.size() && previous->x.allFinite();
    const VectorX start = warm ? shift_warm_start(previous->x, layout) : cold_start(setup);

    MpcOutput out;
    out.schedule = setup.schedule;
    out.solution = solve(nlp, start, options.solver);
    out.degraded = !out.solution.converged();

    const bool failed = out.solution.status == SolverStatus::infeasible
                     || out.solution.status == SolverStatus::numerical_failure || !out.solution.x.allFinite();
    VectorX x = failed ? start : out.solution.x;
    out.reused_previous_control = failed && warm;

    // The knot-0 state is data, not a decision: use it exactly.
    x.segment<3>(layout.com(0)) = current.com_position;
    x.segment<3>(layout.linear_momentum(0)) = current.linear_momentum;
    x.segment<3>(layout.angular_momentum(0)) = current.angular_momentum;
    for (int i = 0; i < layout.num_contacts(); ++i) {
        if (const auto& pin = setup.pinned_contacts[static_cast<std::size_t>(i)]) {
            x.segment<3>(layout.contact_position(0, i)) = *pin;
        }
    }

    out.corner_forces = detail::knot_forces(layout, x, 0, setup.schedule);
    out.adjusted_contacts.resize(static_cast<std::size_t>(layout.num_contacts()));
    out.landing_knot.assign(static_cast<std::size_t>(layout.num_contacts()), -1);
    for (int i = 0; i < layout.num_contacts(); ++i) {
        for (int k = 0; k < layout.horizon(); ++k) {
            if (!setup.schedule(k, i)) {
                continue;
            }
            const auto ks = static_cast<std::size_t>(k);
            const auto is = static_cast<std::size_t>(i);
            const Vector3 p = x.segment<3>(layout.contact_position(k, i));
            out.adjusted_contacts[is] = k == 0 ? p
                                               : project_into_box(p, setup.nominal_contacts[ks][is],
                                                                  setup.contact_orientations[ks][is], setup.box);
            out.landing_knot[is] = k;
            break;
        }
    }
    out.predicted = rollout(setup, x);
    out.predicted_contacts.resize(static_cast<std::size_t>(layout.horizon() + 1));
    for (int k = 0; k <= layout.horizon(); ++k) {
        for (int i = 0; i < layout.num_contacts(); ++i) {
            out.predicted_contacts[static_cast<std::size_t>(k)].push_back(x.segment<3>(layout.contact_position(k, i)));
        }
    }
    return out;
}

/// Stateful wrapper: owns the plan, its CoM reference and the warm start.
class CentroidalMpc {
public:
    CentroidalMpc(ContactPlan plan, PhysicalParams params, MpcOptions options)
        : plan_(std::move(plan)), params_(params), options_(std::move(options))
    {
        params_.validate();
        plan_.validate();
        options_.validate(params_);
        nominal_com_ = nominal_com_trajectory(plan_, params_, options_.com_reference);
    }

    MpcOutput step(const CentroidalState& current, std::span<const Vector3> contact_positions, double t,
                   std::span<const ExternalWrench> disturbance_estimate)
    {
        MpcOutput out = mpc_step(current, contact_positions, plan_, nominal_com_, params_, t, disturbance_estimate,
                                 previous_ ? &*previous_ : nullptr, options_);
        if (out.degraded) {
            ++degraded_;
        }
        if (out.solution.x.allFinite()) {
            previous_ = out.solution;
        }
        return out;
    }

    MpcOutput step(const CentroidalState& current, std::span<const Vector3> contact_positions, double t,
                   const ExternalWrench& disturbance_estimate)
    {
        return step(current, contact_positions, t, std::span<const ExternalWrench>(&disturbance_estimate, 1));
    }

    void reset() { previous_.reset(); }

    [[nodiscard]] int degraded_count() const { return degraded_; }
    [[nodiscard]] const ContactPlan& plan() const { return plan_; }
    [[nodiscard]] const PhysicalParams& params() const { return params_; }
    [[nodiscard]] const MpcOptions& options() const { return options_; }
    [[nodiscard]] const QuinticSpline& nominal_com() const { return nominal_com_; }
    [[nodiscard]] const std::optional<Solution>& previous() const { return previous_; }

private:
    ContactPlan plan_;
    PhysicalParams params_;
    MpcOptions options_;
    QuinticSpline nominal_com_;
    std::optional<Solution> previous_;
    int degraded_{0};
};

}  // namespace centroidal_mpc
