#pragma once

// Centroidal dynamics of a floating-base system whose contacts are
// switched on and off by a known activation schedule.
//
//   d/dt h = sum_i Gamma_i sum_j [ I_3 ; (p_Ci + R_Ci p_vij - p_com)^ ] f_ij
//            + m [g; 0] + [f_ext; tau_ext]
//   d/dt p_com = h_lin / m
//   d/dt p_Ci  = (1 - Gamma_i) v_Ci
//
// Everything here is a pure function over value types.

#include "centroidal_mpc/common.hpp"

#include <span>
#include <string>
#include <vector>

namespace centroidal_mpc {

struct PhysicalParams {
    double mass{1.0};                        // kg
    Vector3 gravity{0.0, 0.0, -9.81};        // m/s^2
    double com_height_nominal{0.5};          // m

    void validate() const
    {
        if (!(mass > 0.0) || !std::isfinite(mass)) {
            throw ConfigError("physical.mass_kg must be positive and finite");
        }
        if (!gravity.allFinite() || !(gravity.norm() > 0.0)) {
            throw ConfigError("physical.gravity_mps2 must be finite and non-zero");
        }
        if (!std::isfinite(com_height_nominal)) {
            throw ConfigError("physical.com_height_nominal_m must be finite");
        }
    }
};

struct CentroidalState {
    Vector3 com_position{Vector3::Zero()};
    Vector3 linear_momentum{Vector3::Zero()};
    Vector3 angular_momentum{Vector3::Zero()};

    [[nodiscard]] Vector6 momentum() const
    {
        Vector6 h;
        h << linear_momentum, angular_momentum;
        return h;
    }

    [[nodiscard]] bool is_finite() const
    {
        return com_position.allFinite() && linear_momentum.allFinite() && angular_momentum.allFinite();
    }

    bool operator==(const CentroidalState&) const = default;
};

/// Corners of a contact surface, expressed in the contact frame.
struct ContactGeometry {
    std::vector<Vector3> corners;

    [[nodiscard]] int size() const { return static_cast<int>(corners.size()); }

    static ContactGeometry point() { return ContactGeometry{{Vector3::Zero()}}; }

    /// Rectangular sole of the given length (x) and width (y), centred on the frame origin.
    static ContactGeometry rectangle(double length, double width)
    {
        const double hx = 0.5 * length;
        const double hy = 0.5 * width;
        return ContactGeometry{{Vector3(hx, hy, 0.0), Vector3(hx, -hy, 0.0),
                                Vector3(-hx, -hy, 0.0), Vector3(-hx, hy, 0.0)}};
    }
};

struct ContactInstant {
    Vector3 position{Vector3::Zero()};
    Matrix3 orientation{Matrix3::Identity()};
    bool active{false};
    std::vector<Vector3> corner_forces;
    Vector3 velocity{Vector3::Zero()};
};

/// Measured or true disturbance acting on the system. The torque is taken about the CoM.
struct ExternalWrench {
    Vector3 force{Vector3::Zero()};
    Vector3 torque_about_com{Vector3::Zero()};

    bool operator==(const ExternalWrench&) const = default;
};

namespace detail {

inline void check_contacts(std::span<const ContactInstant> contacts,
                           std::span<const ContactGeometry> geometry)
{
    if (contacts.size() != geometry.size()) {
        throw StructuralError("contact list has " + std::to_string(contacts.size())
                              + " entries but geometry list has " + std::to_string(geometry.size()));
    }
    for (std::size_t i = 0; i < contacts.size(); ++i) {
        if (contacts[i].corner_forces.size() != geometry[i].corners.size()) {
            throw StructuralError("contact " + std::to_string(i) + " carries "
                                  + std::to_string(contacts[i].corner_forces.size())
                                  + " corner forces but its geometry has "
                                  + std::to_string(geometry[i].corners.size()) + " corners");
        }
    }
}

}  // namespace detail

/// Rate of change of the centroidal momentum. Inactive contacts are skipped
/// entirely, so their forces have exactly zero effect.
inline Vector6 momentum_derivative(const CentroidalState& state,
                                   std::span<const ContactInstant> contacts,
                                   std::span<const ContactGeometry> geometry,
                                   const PhysicalParams& params,
                                   const ExternalWrench& disturbance)
{
    detail::check_contacts(contacts, geometry);
    if (!state.is_finite() || !disturbance.force.allFinite() || !disturbance.torque_about_com.allFinite()) {
        throw InputError("momentum_derivative: non-finite state or disturbance");
    }

    Vector3 force = params.mass * params.gravity + disturbance.force;
    Vector3 torque = disturbance.torque_about_com;
    for (std::size_t i = 0; i < contacts.size(); ++i) {
        const ContactInstant& c = contacts[i];
        if (!c.active) {
            continue;
        }
        if (!c.position.allFinite() || !c.orientation.allFinite()) {
            throw InputError("momentum_derivative: non-finite contact pose");
        }
        for (std::size_t j = 0; j < c.corner_forces.size(); ++j) {
            const Vector3& f = c.corner_forces[j];
            if (!f.allFinite()) {
                throw InputError("momentum_derivative: non-finite corner force");
            }
            const Vector3 arm = c.position + c.orientation * geometry[i].corners[j] - state.com_position;
            force += f;
            torque += arm.cross(f);
        }
    }
    Vector6 hdot;
    hdot << force, torque;
    return hdot;
}

inline Vector3 com_velocity(const Vector3& linear_momentum, const PhysicalParams& params)
{
    if (!(params.mass > 0.0)) {
        throw ConfigError("com_velocity: mass must be positive");
    }
    return linear_momentum / params.mass;
}

inline Vector3 contact_position_derivative(bool active, const Vector3& velocity)
{
    if (!velocity.allFinite()) {
        throw InputError("contact_position_derivative: non-finite velocity");
    }
    return active ? Vector3::Zero() : velocity;
}

struct IntegrationResult {
    CentroidalState state;
    std::vector<Vector3> contact_positions;
};

/// One explicit-Euler step of the centroidal model. Positions of active
/// contacts are copied, never recomputed.
inline IntegrationResult integrate_step(const CentroidalState& state,
                                        std::span<const ContactInstant> contacts,
                                        std::span<const ContactGeometry> geometry,
                                        const PhysicalParams& params,
                                        const ExternalWrench& disturbance,
                                        double dt)
{
    if (!(dt > 0.0) || !std::isfinite(dt)) {
        throw InputError("integrate_step: dt must be positive and finite");
    }
    const Vector6 hdot = momentum_derivative(state, contacts, geometry, params, disturbance);

    IntegrationResult out;
    out.state.linear_momentum = state.linear_momentum + dt * hdot.head<3>();
    out.state.angular_momentum = state.angular_momentum + dt * hdot.tail<3>();
    out.state.com_position = state.com_position + dt * com_velocity(state.linear_momentum, params);

    out.contact_positions.reserve(contacts.size());
    for (const ContactInstant& c : contacts) {
        if (c.active) {
            out.contact_positions.push_back(c.position);
        } else {
            out.contact_positions.push_back(c.position + dt * contact_position_derivative(false, c.velocity));
        }
    }

    if (!out.state.is_finite()) {
        throw IntegrationError("integrate_step: state became non-finite");
    }
    for (const Vector3& p : out.contact_positions) {
        if (!p.allFinite()) {
            throw IntegrationError("integrate_step: contact position became non-finite");
        }
    }
    return out;
}

}  // namespace centroidal_mpc
