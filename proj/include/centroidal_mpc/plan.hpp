#pragma once

// Contact plans: nominal contact poses with their activation windows, the
// per-knot activation schedule seen by the MPC, and the nominal CoM
// reference spline built from the support polygon of each phase.

#include "centroidal_mpc/common.hpp"
#include "centroidal_mpc/model.hpp"
#include "centroidal_mpc/quintic_spline.hpp"

#include <algorithm>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

namespace centroidal_mpc {

/// One activation window [t_start, t_end) of a contact together with the
/// nominal pose the contact takes during it.
struct ContactPhase {
    double t_start{0.0};
    double t_end{0.0};
    Vector3 position{Vector3::Zero()};
    Matrix3 orientation{Matrix3::Identity()};

    [[nodiscard]] bool contains(double t) const { return t >= t_start && t < t_end; }
};

struct NominalContact {
    std::string name;
    ContactGeometry geometry{ContactGeometry::point()};
    std::vector<ContactPhase> phases;   // sorted, disjoint
};

class ContactPlan {
public:
    ContactPlan() = default;
    ContactPlan(std::vector<NominalContact> contacts, double duration)
        : contacts_(std::move(contacts)), duration_(duration)
    {
        validate();
    }

    [[nodiscard]] const std::vector<NominalContact>& contacts() const { return contacts_; }
    [[nodiscard]] const NominalContact& contact(int id) const
    {
        check_id(id);
        return contacts_[static_cast<std::size_t>(id)];
    }
    [[nodiscard]] int num_contacts() const { return static_cast<int>(contacts_.size()); }
    [[nodiscard]] double duration() const { return duration_; }

    [[nodiscard]] std::vector<ContactGeometry> geometries() const
    {
        std::vector<ContactGeometry> g;
        for (const auto& c : contacts_) {
            g.push_back(c.geometry);
        }
        return g;
    }

    /// Contact state Gamma_i(t), half-open windows.
    [[nodiscard]] bool activation(int id, double t) const
    {
        for (const ContactPhase& ph : contact(id).phases) {
            if (ph.contains(t)) {
                return true;
            }
        }
        return false;
    }

    /// Times at or past the plan end map to the last representable instant
    /// before it, i.e. the final phase is held.
    [[nodiscard]] double clamp_time(double t) const
    {
        const double last = std::nextafter(duration_, -std::numeric_limits<double>::infinity());
        return std::min(t, last);
    }

    /// Phase a contact belongs to at time t: the active one, otherwise the
    /// next upcoming one, otherwise the last one.
    [[nodiscard]] const ContactPhase& reference_phase(int id, double t) const
    {
        const auto& phases = contact(id).phases;
        for (const ContactPhase& ph : phases) {
            if (ph.contains(t) || ph.t_start > t) {
                return ph;
            }
        }
        return phases.back();
    }

    /// Index of the phase active at t, or -1.
    [[nodiscard]] int active_phase_index(int id, double t) const
    {
        const auto& phases = contact(id).phases;
        for (std::size_t p = 0; p < phases.size(); ++p) {
            if (phases[p].contains(t)) {
                return static_cast<int>(p);
            }
        }
        return -1;
    }

    void validate() const
    {
        if (!(duration_ > 0.0) || !std::isfinite(duration_)) {
            throw ConfigError("contact plan duration must be positive");
        }
        if (contacts_.empty()) {
            throw ConfigError("contact plan has no contacts");
        }
        for (const NominalContact& c : contacts_) {
            if (c.geometry.corners.empty()) {
                throw ConfigError("contact '" + c.name + "' has no corners");
            }
            if (c.phases.empty()) {
                throw ConfigError("contact '" + c.name + "' has no activation windows");
            }
            for (std::size_t p = 0; p < c.phases.size(); ++p) {
                const ContactPhase& ph = c.phases[p];
                if (!(ph.t_start < ph.t_end)) {
                    throw ConfigError("contact '" + c.name + "': window " + std::to_string(p)
                                      + " has t_start >= t_end");
                }
                if (ph.t_start < 0.0 || ph.t_end > duration_) {
                    throw ConfigError("contact '" + c.name + "': window " + std::to_string(p)
                                      + " lies outside [0, duration]");
                }
                if (p > 0 && ph.t_start < c.phases[p - 1].t_end) {
                    throw ConfigError("contact '" + c.name + "': windows must be sorted and disjoint");
                }
                if (!ph.position.allFinite() || !is_rotation(ph.orientation)) {
                    throw ConfigError("contact '" + c.name + "': invalid nominal pose in window "
                                      + std::to_string(p));
                }
            }
        }
    }

private:
    void check_id(int id) const
    {
        if (id < 0 || id >= num_contacts()) {
            throw LookupError("unknown contact id " + std::to_string(id));
        }
    }

    std::vector<NominalContact> contacts_;
    double duration_{0.0};
};

/// Boolean matrix [knot][contact].
class ContactSchedule {
public:
    ContactSchedule() = default;
    ContactSchedule(int knots, int contacts)
        : knots_(knots), contacts_(contacts), data_(static_cast<std::size_t>(knots * contacts), 0)
    {
    }

    [[nodiscard]] int knots() const { return knots_; }
    [[nodiscard]] int contacts() const { return contacts_; }

    [[nodiscard]] bool operator()(int k, int i) const { return data_[index(k, i)] != 0; }
    void set(int k, int i, bool value) { data_[index(k, i)] = value ? 1 : 0; }

    [[nodiscard]] bool any_active(int k) const
    {
        for (int i = 0; i < contacts_; ++i) {
            if ((*this)(k, i)) {
                return true;
            }
        }
        return false;
    }

    bool operator==(const ContactSchedule&) const = default;

private:
    [[nodiscard]] std::size_t index(int k, int i) const
    {
        if (k < 0 || k >= knots_ || i < 0 || i >= contacts_) {
            throw LookupError("schedule index out of range");
        }
        return static_cast<std::size_t>(k * contacts_ + i);
    }

    int knots_{0};
    int contacts_{0};
    std::vector<std::uint8_t> data_;
};

/// Time at which the plan is sampled for knot k of a horizon starting at t0.
/// The guard keeps grid times on the intended side of window boundaries that
/// lie on the same grid, whatever rounding t0 + k*T picked up.
inline constexpr double knot_time_guard = 1e-9;

inline double knot_query_time(const ContactPlan& plan, double t0, int k, double sampling_time)
{
    return plan.clamp_time(t0 + k * sampling_time + knot_time_guard);
}

/// Gamma for knots t0 + k*T, k = 0..knots-1. Query times past the plan end
/// are clamped (see ContactPlan::clamp_time).
inline ContactSchedule horizon_schedule(const ContactPlan& plan, double t0, int knots, double sampling_time)
{
    if (knots < 1 || !(sampling_time > 0.0)) {
        throw ConfigError("horizon_schedule: need knots >= 1 and sampling time > 0");
    }
    ContactSchedule schedule(knots, plan.num_contacts());
    for (int k = 0; k < knots; ++k) {
        const double t = knot_query_time(plan, t0, k, sampling_time);
        for (int i = 0; i < plan.num_contacts(); ++i) {
            schedule.set(k, i, plan.activation(i, t));
        }
    }
    return schedule;
}

/// Where CoM reference knots are placed.
struct ComReferencePolicy {
    enum class KnotTiming { phase_midpoint, phase_start };
    KnotTiming timing{KnotTiming::phase_midpoint};
    /// Vertical offset above the support centroid; NaN selects PhysicalParams::com_height_nominal.
    double height{std::numeric_limits<double>::quiet_NaN()};
};

/// Nominal CoM trajectory: one knot per contact phase (support centroid
/// lifted by the nominal CoM height). Phases with no active contact give no knot.
inline QuinticSpline nominal_com_trajectory(const ContactPlan& plan, const PhysicalParams& params,
                                            const ComReferencePolicy& policy = {})
{
    std::vector<double> bounds{0.0, plan.duration()};
    for (const NominalContact& c : plan.contacts()) {
        for (const ContactPhase& ph : c.phases) {
            bounds.push_back(ph.t_start);
            bounds.push_back(ph.t_end);
        }
    }
    std::sort(bounds.begin(), bounds.end());
    bounds.erase(std::unique(bounds.begin(), bounds.end()), bounds.end());

    const double height = std::isnan(policy.height) ? params.com_height_nominal : policy.height;
    std::vector<double> times;
    std::vector<Vector3> points;
    for (std::size_t b = 0; b + 1 < bounds.size(); ++b) {
        const double mid = 0.5 * (bounds[b] + bounds[b + 1]);
        Vector3 sum = Vector3::Zero();
        int active = 0;
        for (int i = 0; i < plan.num_contacts(); ++i) {
            const int p = plan.active_phase_index(i, mid);
            if (p >= 0) {
                sum += plan.contact(i).phases[static_cast<std::size_t>(p)].position;
                ++active;
            }
        }
        if (active == 0) {
            continue;
        }
        const double knot_time =
            policy.timing == ComReferencePolicy::KnotTiming::phase_midpoint ? mid : bounds[b];
        times.push_back(knot_time);
        points.push_back(sum / active + Vector3(0.0, 0.0, height));
    }
    if (times.empty()) {
        throw ConfigError("nominal_com_trajectory: plan has no supported phase");
    }
    return QuinticSpline(std::move(times), std::move(points));
}

}  // namespace centroidal_mpc
