#include "centroidal_mpc/centroidal_mpc.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace centroidal_mpc;

namespace {

ContactPhase phase(double a, double b, const Vector3& p, double yaw = 0.0)
{
    ContactPhase ph;
    ph.t_start = a;
    ph.t_end = b;
    ph.position = p;
    ph.orientation = yaw_rotation(yaw);
    return ph;
}

ContactPlan hopping_plan()
{
    NominalContact foot;
    foot.name = "foot";
    for (int s = 0; s < 8; ++s) {
        foot.phases.push_back(phase(0.6 * s, 0.6 * s + 0.4, Vector3(0.05 * s, 0, 0)));
    }
    return ContactPlan({foot}, 5.0);
}

ContactPlan biped_plan()
{
    NominalContact left;
    left.name = "left";
    left.geometry = ContactGeometry::rectangle(0.2, 0.1);
    left.phases = {phase(0.0, 0.5, {0, 0.1, 0}), phase(0.8, 1.3, {0.2, 0.1, 0}, 0.2), phase(1.7, 2.0, {0.4, 0.1, 0})};
    NominalContact right;
    right.name = "right";
    right.geometry = ContactGeometry::rectangle(0.2, 0.1);
    right.phases = {phase(0.4, 0.9, {0.1, -0.1, 0}), phase(1.3, 1.6, {0.3, -0.1, 0}, -0.1), phase(2.0, 3.0, {0.5, -0.1, 0})};
    return ContactPlan({left, right}, 3.0);
}

TranscriptionSetup setup_for(const ContactPlan& plan, double t, int horizon = 12, const Vector3& push = {0, 4, 0})
{
    PhysicalParams params;
    params.com_height_nominal = 0.8;
    MpcOptions options;
    options.horizon = horizon;
    const QuinticSpline spline = nominal_com_trajectory(plan, params);
    CentroidalState s;
    s.com_position = spline(t) + Vector3(0.01, -0.02, 0.03);
    s.linear_momentum = {0.1, 0.2, -0.1};
    s.angular_momentum = {0.01, 0.02, 0.0};
    std::vector<Vector3> positions;
    for (int i = 0; i < plan.num_contacts(); ++i) {
        positions.push_back(plan.reference_phase(i, knot_query_time(plan, t, 0, options.sampling_time)).position);
    }
    ExternalWrench w;
    w.force = push;
    return make_setup(s, positions, plan, spline, params, t, std::span<const ExternalWrench>(&w, 1), options);
}

VectorX random_point(const TranscriptionSetup& setup, unsigned seed, double scale = 1.0)
{
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> u(-scale, scale);
    VectorX x = cold_start(setup);
    for (Index i = 0; i < x.size(); ++i) {
        x(i) += u(rng);
    }
    return x;
}

// Fills the states and contact positions of x by integrating its controls.
void integrate_in_place(const TranscriptionSetup& setup, VectorX& x)
{
    const DecisionLayout layout = setup.layout();
    const int nc = setup.num_contacts();
    x.segment<3>(layout.com(0)) = setup.initial_state.com_position;
    x.segment<3>(layout.linear_momentum(0)) = setup.initial_state.linear_momentum;
    x.segment<3>(layout.angular_momentum(0)) = setup.initial_state.angular_momentum;
    for (int i = 0; i < nc; ++i) {
        if (setup.pinned_contacts[static_cast<std::size_t>(i)]) {
            x.segment<3>(layout.contact_position(0, i)) = *setup.pinned_contacts[static_cast<std::size_t>(i)];
        }
    }
    for (int k = 0; k < setup.horizon; ++k) {
        CentroidalState s;
        s.com_position = x.segment<3>(layout.com(k));
        s.linear_momentum = x.segment<3>(layout.linear_momentum(k));
        s.angular_momentum = x.segment<3>(layout.angular_momentum(k));
        std::vector<ContactInstant> contacts(static_cast<std::size_t>(nc));
        for (int i = 0; i < nc; ++i) {
            auto& c = contacts[static_cast<std::size_t>(i)];
            c.active = setup.schedule(k, i);
            c.position = x.segment<3>(layout.contact_position(k, i));
            c.orientation = setup.contact_orientations[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)];
            c.velocity = x.segment<3>(layout.contact_velocity(k, i));
            for (int j = 0; j < layout.corners(i); ++j) {
                c.corner_forces.push_back(x.segment<3>(layout.force(k, i, j)));
            }
        }
        const auto r = integrate_step(s, contacts, setup.geometry, setup.params,
                                      setup.disturbance[static_cast<std::size_t>(k)], setup.sampling_time);
        x.segment<3>(layout.com(k + 1)) = r.state.com_position;
        x.segment<3>(layout.linear_momentum(k + 1)) = r.state.linear_momentum;
        x.segment<3>(layout.angular_momentum(k + 1)) = r.state.angular_momentum;
        for (int i = 0; i < nc; ++i) {
            x.segment<3>(layout.contact_position(k + 1, i)) = r.contact_positions[static_cast<std::size_t>(i)];
        }
    }
}

}  // namespace

// ---- cost terms ----

TEST(ForceRegularization, Examples)
{
    const std::vector<Vector3> equal(4, Vector3(1, 2, 3));
    EXPECT_EQ(force_regularization_cost(equal, Vector3::Ones()), 0.0);
    const std::vector<Vector3> single{Vector3(3, -1, 7)};
    EXPECT_EQ(force_regularization_cost(single, Vector3::Constant(5.0)), 0.0);
    const std::vector<Vector3> two{Vector3(0, 0, 2), Vector3(0, 0, 0)};
    EXPECT_DOUBLE_EQ(force_regularization_cost(two, Vector3::Ones()), 1.0);
}

TEST(ForceRate, Examples)
{
    EXPECT_EQ(force_rate_cost({1, 2, 3}, {1, 2, 3}, 0.1, Vector3::Ones()), 0.0);
    EXPECT_DOUBLE_EQ(force_rate_cost({0, 0, 0}, {0, 0, 1}, 1.0, Vector3::Ones()), 0.5);
    const double a = force_rate_cost({0, 1, 0}, {1, 0, 2}, 0.1, Vector3(1, 2, 3));
    const double b = force_rate_cost({0, 1, 0}, {1, 0, 2}, 0.2, Vector3(1, 2, 3));
    EXPECT_NEAR(b, a / 4.0, 1e-12 * a);
}

TEST(CentroidalTracking, Examples)
{
    CentroidalState s;
    s.com_position = {0.1, 0.2, 0.9};
    EXPECT_EQ(centroidal_tracking_cost(s, Vector3::Zero(), s.com_position, Vector3::Ones(), Vector3::Ones()), 0.0);
    s.angular_momentum = {0, 0, 1};
    EXPECT_DOUBLE_EQ(centroidal_tracking_cost(s, Vector3::Zero(), s.com_position, Vector3::Ones(), Vector3::Ones()),
                     0.5);
    CentroidalState off;
    off.com_position = {0.1, 0, 1};
    EXPECT_NEAR(centroidal_tracking_cost(off, Vector3::Zero(), Vector3(0, 0, 1), Vector3::Ones(),
                                         Vector3::Constant(100.0)),
                0.5, 1e-12);
}

TEST(ContactRegularization, Examples)
{
    EXPECT_EQ(contact_regularization_cost({0.3, 0.1, 0}, {0.3, 0.1, 0}, Vector3::Ones()), 0.0);
    EXPECT_NEAR(contact_regularization_cost({0.1, 0, 0}, Vector3::Zero(), Vector3::Ones()), 0.005, 1e-15);
    const double x = contact_regularization_cost({0.1, 0, 0}, Vector3::Zero(), Vector3::Constant(3.0));
    const double y = contact_regularization_cost({0, 0.1, 0}, Vector3::Zero(), Vector3::Constant(3.0));
    const double z = contact_regularization_cost({0, 0, 0.1}, Vector3::Zero(), Vector3::Constant(3.0));
    EXPECT_EQ(x, y);
    EXPECT_EQ(y, z);
}

// ---- constraints ----

TEST(FrictionPyramid, Examples)
{
    const FrictionPyramid unit = friction_pyramid(1.0, 0.0, 100.0);
    EXPECT_TRUE(unit.satisfied(Matrix3::Identity(), {0, 0, 1}));
    const FrictionPyramid p = friction_pyramid(0.7, 0.0, 100.0);
    const Vector6 r = p.residual(Matrix3::Identity(), {2, 0, 1});
    EXPECT_NEAR(r(0), 2.0 - 0.7 / std::sqrt(2.0), 1e-15);
    EXPECT_FALSE(p.satisfied(Matrix3::Identity(), {2, 0, 1}));
    const Vector6 pull = p.residual(Matrix3::Identity(), {0, 0, -1});
    EXPECT_GT(pull(4), 0.0);
    EXPECT_THROW(friction_pyramid(0.0, 0.0, 1.0), ConfigError);
    EXPECT_THROW(friction_pyramid(0.5, 2.0, 1.0), ConfigError);
}

TEST(FrictionPyramid, RotatedContactFrame)
{
    const FrictionPyramid p = friction_pyramid(0.5, 0.0, 100.0);
    const Matrix3 tilt = Eigen::AngleAxisd(0.5, Vector3::UnitX()).toRotationMatrix();
    EXPECT_TRUE(p.satisfied(tilt, tilt * Vector3(0, 0, 5)));
    EXPECT_FALSE(p.satisfied(Matrix3::Identity(), tilt * Vector3(0, 0, 5)));
}

TEST(ContactBox, Examples)
{
    ContactBox box;
    box.lower = {-0.1, -0.1, 0};
    box.upper = {0.1, 0.1, 0};
    const auto at = contact_box_violation({0.2, 0.1, 0}, {0.2, 0.1, 0}, Matrix3::Identity(), box);
    EXPECT_EQ(at.residual, Vector3::Zero());
    EXPECT_TRUE(at.feasible());
    const auto off = contact_box_violation({0, 0, 0}, {0.15, 0, 0}, Matrix3::Identity(), box);
    EXPECT_FALSE(off.feasible());
    EXPECT_GT(off.residual.x(), box.upper.x());

    box.upper = {0.2, 0.1, 0};
    const auto rotated = contact_box_violation({0, 0, 0}, {0.15, 0, 0}, yaw_rotation(M_PI / 2), box);
    EXPECT_NEAR(rotated.residual.x(), 0.0, 1e-15);
    EXPECT_NEAR(rotated.residual.y(), -0.15, 1e-15);
    EXPECT_FALSE(rotated.feasible());
}

TEST(ContactBox, ProjectionLandsOnBox)
{
    ContactBox box;
    const Vector3 nominal(0.3, 0.1, 0.0);
    const Vector3 p = project_into_box({0.8, -0.05, 0.2}, nominal, yaw_rotation(0.4), box);
    EXPECT_TRUE(contact_box_violation(p, nominal, yaw_rotation(0.4), box).feasible(1e-15));
}

// ---- layout and problem ----

TEST(DecisionLayout, MinimalDimension)
{
    const DecisionLayout layout(1, {1});
    EXPECT_EQ(layout.size(), 30);
    const DecisionLayout two(30, {4, 4});
    EXPECT_EQ(two.size(), 31 * (9 + 6) + 30 * (24 + 6));
}

TEST(DecisionLayout, IndexMapIsBijective)
{
    const DecisionLayout layout(5, {4, 1});
    std::vector<int> hits(static_cast<std::size_t>(layout.size()), 0);
    const auto mark = [&](Index start, int n) {
        for (int a = 0; a < n; ++a) {
            ++hits[static_cast<std::size_t>(start + a)];
        }
    };
    for (int k = 0; k <= 5; ++k) {
        mark(layout.com(k), 3);
        mark(layout.linear_momentum(k), 3);
        mark(layout.angular_momentum(k), 3);
        for (int i = 0; i < 2; ++i) {
            mark(layout.contact_position(k, i), 3);
            if (k < 5) {
                mark(layout.contact_velocity(k, i), 3);
                for (int j = 0; j < layout.corners(i); ++j) {
                    mark(layout.force(k, i, j), 3);
                }
            }
        }
    }
    for (int h : hits) {
        EXPECT_EQ(h, 1);
    }
}

TEST(Transcription, ConstraintCounts)
{
    const TranscriptionSetup setup = setup_for(hopping_plan(), 0.0, 1);
    const CentroidalTranscription tr(setup);
    EXPECT_EQ(tr.num_variables(), 30);
    EXPECT_EQ(tr.num_pin_rows(), 9 + 3);
    EXPECT_EQ(tr.num_defect_rows(), 9 + 3);
    EXPECT_EQ(tr.num_inequalities(), 6);
}

TEST(Transcription, CostAtColdStartIsFiniteAndMatchesTerms)
{
    for (const ContactPlan& plan : {hopping_plan(), biped_plan()}) {
        const TranscriptionSetup setup = setup_for(plan, 0.3);
        const CentroidalTranscription tr(setup);
        const VectorX x0 = cold_start(setup);
        EXPECT_TRUE(std::isfinite(tr.cost(x0)));
        const VectorX x = random_point(setup, 7);
        EXPECT_NEAR(tr.cost(x), tr.cost_by_terms(x), 1e-9 * (1.0 + tr.cost(x)));
    }
}

TEST(Transcription, DefectsVanishOnRollout)
{
    for (const ContactPlan& plan : {hopping_plan(), biped_plan()}) {
        for (double t : {0.0, 0.3, 0.7, 1.2}) {
            const TranscriptionSetup setup = setup_for(plan, t);
            const CentroidalTranscription tr(setup);
            VectorX x = random_point(setup, 11);
            integrate_in_place(setup, x);
            const VectorX c = tr.equalities(x);
            const VectorX pins_and_defects = c.head(tr.num_pin_rows() + tr.num_defect_rows());
            EXPECT_LT(pins_and_defects.cwiseAbs().maxCoeff(), 1e-12) << "t = " << t;
        }
    }
}

TEST(Transcription, InactiveForcesDoNotEnterDefects)
{
    const TranscriptionSetup setup = setup_for(biped_plan(), 1.4, 10);
    const CentroidalTranscription tr(setup);
    const DecisionLayout& layout = tr.layout();
    const VectorX x = random_point(setup, 5);
    const Eigen::MatrixXd jac = Eigen::MatrixXd(tr.equality_jacobian(x));
    const Index first = tr.num_pin_rows();
    int checked = 0;
    for (int k = 0; k < setup.horizon; ++k) {
        for (int i = 0; i < setup.num_contacts(); ++i) {
            if (setup.schedule(k, i)) {
                continue;
            }
            for (int j = 0; j < layout.corners(i); ++j) {
                const auto block = jac.block(first, layout.force(k, i, j), tr.num_defect_rows(), 3);
                EXPECT_EQ(block.cwiseAbs().maxCoeff(), 0.0);
                ++checked;
            }
        }
    }
    EXPECT_GT(checked, 0);
}

TEST(Transcription, AnalyticDerivativesMatchFiniteDifferences)
{
    for (const ContactPlan& plan : {hopping_plan(), biped_plan()}) {
        const TranscriptionSetup setup = setup_for(plan, 0.9, 6);
        const NlpProblem nlp = build_nlp(setup);
        for (unsigned seed = 1; seed <= 3; ++seed) {
            const DerivativeReport r = check_derivatives(nlp, random_point(setup, seed), 1e-6);
            EXPECT_LT(r.max_relative_error, 1e-5) << to_string(r.worst_block) << " (" << r.worst_row << ", "
                                                  << r.worst_col << ")";
        }
    }
}

TEST(Transcription, CurvatureMatchesJacobianDerivative)
{
    const TranscriptionSetup setup = setup_for(biped_plan(), 0.3, 6);
    const NlpProblem nlp = build_nlp(setup);
    const VectorX x = random_point(setup, 3);
    std::mt19937 rng(9);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    VectorX y(nlp.num_equalities);
    for (Index i = 0; i < y.size(); ++i) {
        y(i) = u(rng);
    }
    const VectorX z = VectorX::Zero(nlp.num_inequalities);
    const Eigen::MatrixXd h = Eigen::MatrixXd(nlp.constraint_curvature(x, y, z));
    EXPECT_LT((h - h.transpose()).cwiseAbs().maxCoeff(), 1e-15);
    constexpr double step = 1e-6;
    double worst = 0.0;
    for (Index j = 0; j < x.size(); ++j) {
        VectorX xp = x;
        VectorX xm = x;
        xp(j) += step;
        xm(j) -= step;
        const VectorX gp = nlp.eval_equality_jacobian(xp).transpose() * y;
        const VectorX gm = nlp.eval_equality_jacobian(xm).transpose() * y;
        worst = std::max(worst, ((gp - gm) / (2 * step) - h.col(j)).cwiseAbs().maxCoeff());
    }
    EXPECT_LT(worst, 1e-7);
    EXPECT_GT(h.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Transcription, BoxRowsOnlyOnFreePositions)
{
    const TranscriptionSetup setup = setup_for(hopping_plan(), 0.0, 10);
    // Stance 0..0.4, flight 0.4..0.6, stance 0.6..
    EXPECT_FALSE(setup.box_constrained(0, 0));
    EXPECT_FALSE(setup.box_constrained(3, 0));
    EXPECT_FALSE(setup.box_constrained(4, 0));
    EXPECT_TRUE(setup.box_constrained(5, 0));
    EXPECT_TRUE(setup.box_constrained(6, 0));
    EXPECT_FALSE(setup.box_constrained(7, 0));
}

TEST(Transcription, PerKnotDisturbanceProfile)
{
    const ContactPlan plan = hopping_plan();
    const PhysicalParams params;
    MpcOptions options;
    options.horizon = 4;
    const QuinticSpline spline = nominal_com_trajectory(plan, params);
    const std::vector<Vector3> positions{Vector3::Zero()};
    std::vector<ExternalWrench> profile(4);
    profile[1].force = {0, 1, 0};
    const TranscriptionSetup s =
        make_setup(CentroidalState{}, positions, plan, spline, params, 0.0, profile, options);
    EXPECT_EQ(s.disturbance[1].force, Vector3(0, 1, 0));
    EXPECT_EQ(s.disturbance[2].force, Vector3::Zero());
    std::vector<ExternalWrench> wrong(3);
    EXPECT_THROW(make_setup(CentroidalState{}, positions, plan, spline, params, 0.0, wrong, options),
                 StructuralError);
}
