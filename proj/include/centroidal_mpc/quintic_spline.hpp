#pragma once

#include "centroidal_mpc/common.hpp"

#include <algorithm>
#include <array>
#include <vector>

namespace centroidal_mpc {

/// Piecewise quintic through a list of 3D waypoints.
///
/// Each segment is the quintic Hermite interpolant of position, velocity
/// and acceleration at its two end knots, so the curve is C2 by
/// construction. Velocity and acceleration are zero at the first and last
/// knot; interior knot derivatives come from the parabola through the knot
/// and its two neighbours. Queries outside the knot range clamp to the
/// boundary point.
class QuinticSpline {
public:
    struct Sample {
        Vector3 position{Vector3::Zero()};
        Vector3 velocity{Vector3::Zero()};
        Vector3 acceleration{Vector3::Zero()};
    };

    QuinticSpline() = default;

    QuinticSpline(std::vector<double> times, std::vector<Vector3> points)
        : times_(std::move(times)), points_(std::move(points))
    {
        if (times_.empty() || times_.size() != points_.size()) {
            throw StructuralError("QuinticSpline: need matching, non-empty knot times and points");
        }
        for (std::size_t i = 1; i < times_.size(); ++i) {
            if (!(times_[i] > times_[i - 1])) {
                throw InputError("QuinticSpline: knot times must be strictly increasing");
            }
        }
        for (const Vector3& p : points_) {
            if (!p.allFinite()) {
                throw InputError("QuinticSpline: non-finite knot point");
            }
        }
        build();
    }

    [[nodiscard]] const std::vector<double>& knot_times() const { return times_; }
    [[nodiscard]] const std::vector<Vector3>& knot_points() const { return points_; }
    [[nodiscard]] bool empty() const { return times_.empty(); }

    [[nodiscard]] Sample sample(double t) const
    {
        if (times_.empty()) {
            throw StructuralError("QuinticSpline: evaluating an empty spline");
        }
        Sample s;
        if (times_.size() == 1 || t <= times_.front()) {
            s.position = points_.front();
            return s;
        }
        if (t >= times_.back()) {
            s.position = points_.back();
            return s;
        }
        const auto it = std::upper_bound(times_.begin(), times_.end(), t);
        const std::size_t seg = static_cast<std::size_t>(it - times_.begin()) - 1;
        const double tau = t - times_[seg];
        const auto& c = coefficients_[seg];
        // Horner evaluation of p, p', p''.
        s.position = ((((c[5] * tau + c[4]) * tau + c[3]) * tau + c[2]) * tau + c[1]) * tau + c[0];
        s.velocity = (((5.0 * c[5] * tau + 4.0 * c[4]) * tau + 3.0 * c[3]) * tau + 2.0 * c[2]) * tau + c[1];
        s.acceleration = ((20.0 * c[5] * tau + 12.0 * c[4]) * tau + 6.0 * c[3]) * tau + 2.0 * c[2];
        return s;
    }

    [[nodiscard]] Vector3 operator()(double t) const { return sample(t).position; }

private:
    void build()
    {
        const std::size_t n = times_.size();
        std::vector<Vector3> vel(n, Vector3::Zero());
        std::vector<Vector3> acc(n, Vector3::Zero());
        for (std::size_t i = 1; i + 1 < n; ++i) {
            const double h0 = times_[i] - times_[i - 1];
            const double h1 = times_[i + 1] - times_[i];
            const Vector3 s0 = (points_[i] - points_[i - 1]) / h0;
            const Vector3 s1 = (points_[i + 1] - points_[i]) / h1;
            vel[i] = (h1 * s0 + h0 * s1) / (h0 + h1);
            acc[i] = 2.0 * (s1 - s0) / (h0 + h1);
        }
        coefficients_.clear();
        for (std::size_t i = 0; i + 1 < n; ++i) {
            coefficients_.push_back(hermite(points_[i], vel[i], acc[i],
                                            points_[i + 1], vel[i + 1], acc[i + 1],
                                            times_[i + 1] - times_[i]));
        }
    }

    static std::array<Vector3, 6> hermite(const Vector3& p0, const Vector3& v0, const Vector3& a0,
                                          const Vector3& p1, const Vector3& v1, const Vector3& a1,
                                          double h)
    {
        const double h2 = h * h;
        const double h3 = h2 * h;
        return {p0,
                v0,
                0.5 * a0,
                (20.0 * (p1 - p0) - (8.0 * v1 + 12.0 * v0) * h - (3.0 * a0 - a1) * h2) / (2.0 * h3),
                (30.0 * (p0 - p1) + (14.0 * v1 + 16.0 * v0) * h + (3.0 * a0 - 2.0 * a1) * h2) / (2.0 * h3 * h),
                (12.0 * (p1 - p0) - 6.0 * (v1 + v0) * h - (a0 - a1) * h2) / (2.0 * h3 * h2)};
    }

    std::vector<double> times_;
    std::vector<Vector3> points_;
    std::vector<std::array<Vector3, 6>> coefficients_;
};

}  // namespace centroidal_mpc
