#include "centroidal_mpc/plan.hpp"

#include <gtest/gtest.h>

using namespace centroidal_mpc;

namespace {

NominalContact contact(const std::string& name, std::vector<std::pair<double, double>> windows,
                       const Vector3& position = Vector3::Zero())
{
    NominalContact c;
    c.name = name;
    for (auto [a, b] : windows) {
        ContactPhase ph;
        ph.t_start = a;
        ph.t_end = b;
        ph.position = position;
        c.phases.push_back(ph);
    }
    return c;
}

// Walking with double support followed by running with aerial phases.
ContactPlan walk_then_run()
{
    NominalContact left = contact("left", {{0.0, 0.5}, {0.8, 1.3}, {1.7, 2.0}, {2.4, 2.7}}, {0, 0.1, 0});
    NominalContact right = contact("right", {{0.4, 0.9}, {1.3, 1.6}, {2.0, 2.3}}, {0.1, -0.1, 0});
    return ContactPlan({left, right}, 3.0);
}

}  // namespace

TEST(Activation, HalfOpenWindows)
{
    const ContactPlan one({contact("foot", {{0, 1}})}, 5.0);
    EXPECT_TRUE(one.activation(0, 0.5));
    EXPECT_FALSE(one.activation(0, 1.0));
    const ContactPlan two({contact("foot", {{0, 1}, {2, 3}})}, 5.0);
    EXPECT_FALSE(two.activation(0, 1.5));
    EXPECT_TRUE(two.activation(0, 2.0));
}

TEST(Activation, UnknownContactThrows)
{
    const ContactPlan plan({contact("foot", {{0, 1}})}, 2.0);
    EXPECT_THROW((void)plan.activation(3, 0.5), LookupError);
}

TEST(ContactPlan, RejectsOverlappingWindows)
{
    EXPECT_THROW(ContactPlan({contact("foot", {{0, 1}, {0.5, 2}})}, 3.0), ConfigError);
    EXPECT_THROW(ContactPlan({contact("foot", {{1, 1}})}, 3.0), ConfigError);
    EXPECT_THROW(ContactPlan({contact("foot", {{0, 4}})}, 3.0), ConfigError);
}

TEST(ContactPlan, ReferencePhaseLooksAhead)
{
    const ContactPlan plan({contact("foot", {{0, 1}, {2, 3}})}, 5.0);
    EXPECT_EQ(plan.reference_phase(0, 0.5).t_start, 0.0);
    EXPECT_EQ(plan.reference_phase(0, 1.5).t_start, 2.0);
    EXPECT_EQ(plan.reference_phase(0, 4.0).t_start, 2.0);
}

TEST(HorizonSchedule, SingleWindowColumn)
{
    const ContactPlan plan({contact("foot", {{0, 1}})}, 5.0);
    const ContactSchedule s = horizon_schedule(plan, 0.0, 3, 0.5);
    EXPECT_TRUE(s(0, 0));
    EXPECT_TRUE(s(1, 0));
    EXPECT_FALSE(s(2, 0));
}

TEST(HorizonSchedule, AlwaysActiveIsAllTrue)
{
    const ContactPlan plan({contact("left", {{0, 10}}), contact("right", {{0, 10}})}, 10.0);
    const ContactSchedule s = horizon_schedule(plan, 0.0, 30, 0.1);
    for (int k = 0; k < 30; ++k) {
        EXPECT_TRUE(s(k, 0) && s(k, 1));
    }
}

TEST(HorizonSchedule, RunningHasAerialRows)
{
    const ContactPlan plan = walk_then_run();
    const double T = 0.1;
    const ContactSchedule s = horizon_schedule(plan, 0.0, 30, T);
    int aerial = 0;
    for (int k = 0; k < 30; ++k) {
        const double t = k * T;
        for (int i = 0; i < 2; ++i) {
            EXPECT_EQ(s(k, i), plan.activation(i, t + knot_time_guard)) << "knot " << k;
        }
        aerial += s.any_active(k) ? 0 : 1;
    }
    // Aerial windows: [1.6,1.7), [2.3,2.4), [2.7,3.0).
    EXPECT_EQ(aerial, 5);
    EXPECT_FALSE(s.any_active(16));
    EXPECT_FALSE(s.any_active(23));
    EXPECT_TRUE(s.any_active(13));
}

TEST(HorizonSchedule, GridTimesWithRoundingLandOnWindows)
{
    const ContactPlan plan({contact("foot", {{0.0, 0.3}, {0.9, 1.5}})}, 3.0);
    // 3 * 0.3 evaluates to 0.8999999999999999.
    const ContactSchedule s = horizon_schedule(plan, 0.0, 6, 0.3);
    EXPECT_FALSE(s(2, 0));
    EXPECT_TRUE(s(3, 0));
    EXPECT_TRUE(s(4, 0));
    EXPECT_FALSE(s(5, 0));
}

TEST(HorizonSchedule, PastPlanEndHoldsLastPhase)
{
    const ContactPlan plan({contact("foot", {{0, 2}})}, 2.0);
    const ContactSchedule s = horizon_schedule(plan, 1.5, 10, 0.1);
    for (int k = 0; k < 10; ++k) {
        EXPECT_TRUE(s(k, 0));
    }
}

TEST(QuinticSpline, SingleKnotIsConstant)
{
    const ContactPlan plan({contact("foot", {{0, 1}})}, 1.0);
    PhysicalParams p;
    p.com_height_nominal = 1.0;
    const QuinticSpline spline = nominal_com_trajectory(plan, p);
    for (double t : {-1.0, 0.0, 0.3, 0.5, 2.0}) {
        const auto s = spline.sample(t);
        EXPECT_EQ(s.position, Vector3(0, 0, 1));
        EXPECT_EQ(s.velocity, Vector3::Zero());
        EXPECT_EQ(s.acceleration, Vector3::Zero());
    }
}

TEST(QuinticSpline, TwoKnotBoundaryValues)
{
    const QuinticSpline spline({0.0, 1.0}, {Vector3(0, 0, 1), Vector3(1, 0, 1)});
    const auto a = spline.sample(0.0);
    const auto b = spline.sample(1.0);
    EXPECT_NEAR((a.position - Vector3(0, 0, 1)).norm(), 0.0, 1e-12);
    EXPECT_NEAR((b.position - Vector3(1, 0, 1)).norm(), 0.0, 1e-12);
    EXPECT_NEAR(a.velocity.norm() + a.acceleration.norm(), 0.0, 1e-9);
    EXPECT_NEAR(b.velocity.norm() + b.acceleration.norm(), 0.0, 1e-9);
}

TEST(QuinticSpline, TwoKnotMidpoint)
{
    const QuinticSpline spline({0.0, 1.0}, {Vector3(0, 0, 1), Vector3(1, 0, 1)});
    EXPECT_NEAR((spline(0.5) - Vector3(0.5, 0, 1)).norm(), 0.0, 1e-12);
    // 10 s^3 - 15 s^4 + 6 s^5 at s = 0.25.
    EXPECT_NEAR(spline(0.25).x(), 10 * 0.015625 - 15 * 0.00390625 + 6 * 0.0009765625, 1e-12);
}

TEST(QuinticSpline, InterpolatesAndIsTwiceContinuous)
{
    const std::vector<double> times{0.0, 0.4, 1.1, 1.5, 2.6};
    const std::vector<Vector3> points{{0, 0, 1}, {0.2, 0.1, 1.1}, {0.5, -0.1, 0.9}, {0.6, 0.0, 1.0}, {1.0, 0.2, 1.0}};
    const QuinticSpline spline(times, points);
    for (std::size_t i = 0; i < times.size(); ++i) {
        EXPECT_LT((spline(times[i]) - points[i]).norm(), 1e-9);
    }
    constexpr double eps = 1e-7;
    for (std::size_t i = 1; i + 1 < times.size(); ++i) {
        const auto l = spline.sample(times[i] - eps);
        const auto r = spline.sample(times[i] + eps);
        EXPECT_LT((l.velocity - r.velocity).norm(), 1e-5);
        EXPECT_LT((l.acceleration - r.acceleration).norm(), 1e-4);
    }
    EXPECT_LT(spline.sample(2.6).velocity.norm(), 1e-9);
    EXPECT_LT(spline.sample(2.6).acceleration.norm(), 1e-9);
}

TEST(QuinticSpline, ClampsOutsideRange)
{
    const QuinticSpline spline({0.5, 1.0}, {Vector3(0, 0, 1), Vector3(1, 0, 1)});
    EXPECT_EQ(spline(0.0), Vector3(0, 0, 1));
    EXPECT_EQ(spline(3.0), Vector3(1, 0, 1));
}

TEST(QuinticSpline, RejectsUnorderedKnots)
{
    EXPECT_THROW(QuinticSpline({1.0, 0.5}, {Vector3::Zero(), Vector3::Zero()}), InputError);
    EXPECT_THROW(QuinticSpline({}, {}), StructuralError);
}

TEST(NominalCom, AerialPhasesAddNoKnot)
{
    // Stance [0,1), flight [1,1.5), stance [1.5,2.5).
    const ContactPlan plan({contact("foot", {{0, 1}, {1.5, 2.5}}, {0.2, 0, 0})}, 2.5);
    PhysicalParams p;
    p.com_height_nominal = 0.8;
    const QuinticSpline spline = nominal_com_trajectory(plan, p);
    ASSERT_EQ(spline.knot_times().size(), 2u);
    EXPECT_DOUBLE_EQ(spline.knot_times()[0], 0.5);
    EXPECT_DOUBLE_EQ(spline.knot_times()[1], 2.0);
    EXPECT_EQ(spline.knot_points()[0], Vector3(0.2, 0, 0.8));
}

TEST(NominalCom, SupportCentroidInDoubleSupport)
{
    const ContactPlan plan({contact("left", {{0, 2}}, {0, 0.1, 0}), contact("right", {{1, 2}}, {0.2, -0.1, 0})}, 2.0);
    const QuinticSpline spline = nominal_com_trajectory(plan, PhysicalParams{});
    ASSERT_EQ(spline.knot_points().size(), 2u);
    EXPECT_NEAR((spline.knot_points()[1] - Vector3(0.1, 0, 0.5)).norm(), 0.0, 1e-15);
}
