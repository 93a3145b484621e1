#include "centroidal_mpc/centroidal_mpc.hpp"

#include "scenario_files.hpp"

#include <cstdio>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

using namespace centroidal_mpc;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(int criterion, bool pass, const std::string& detail)
{
    std::printf("%s criterion %d: %s\n", pass ? "PASS" : "FAIL", criterion, detail.c_str());
    std::fflush(stdout);
    failures += pass ? 0 : 1;
}

std::string format(const char* fmt, auto... args)
{
    char buf[512];
    std::snprintf(buf, sizeof buf, fmt, args...);
    return buf;
}

double mean_or_nan(const AdjustmentStats& s) { return s.mean.value_or(std::nan("")); }

bool in_band(const AdjustmentStats& s, double lo, double hi) { return s.mean && *s.mean >= lo && *s.mean <= hi; }

// Largest change of angular momentum across an aerial knot of any prediction.
struct AerialMonitor {
    double worst{0.0};
    int knots{0};

    void operator()(int, const MpcOutput& out)
    {
        if (!out.solution.converged()) {
            return;
        }
        for (int k = 0; k < out.schedule.knots(); ++k) {
            if (out.schedule.any_active(k)) {
                continue;
            }
            const auto ks = static_cast<std::size_t>(k);
            worst = std::max(worst, (out.predicted[ks + 1].angular_momentum - out.predicted[ks].angular_momentum)
                                        .cwiseAbs()
                                        .maxCoeff());
            ++knots;
        }
    }
};

SimulationResult run(const ScenarioConfig& cfg, AerialMonitor* monitor = nullptr)
{
    SimulationHooks hooks;
    if (monitor != nullptr) {
        hooks.on_step = [monitor](int s, const MpcOutput& out) { (*monitor)(s, out); };
    }
    return simulate(cfg, hooks);
}

// ---- criterion 4 -------------------------------------------------------------

void derivatives(const ScenarioConfig& one, const ScenarioConfig& two)
{
    const DerivativeSweep a = derivative_sweep(one, 100, 1e-6, 1);
    const DerivativeSweep b = derivative_sweep(two, 100, 1e-6, 1);
    report(4, a.worst < 1e-5 && b.worst < 1e-5,
           format("max relative derivative error over 100 points: one_leg %.2e, two_leg %.2e (limit 1e-5)", a.worst,
                  b.worst));
}

// ---- criterion 5 -------------------------------------------------------------

// Maximum pin and defect residual after filling the states of a random point
// with an explicit-Euler rollout of its controls.
double rollout_defects(const ScenarioConfig& cfg, unsigned seed)
{
    const ContactPlan plan = cfg.plan();
    const QuinticSpline nominal = nominal_com_trajectory(plan, cfg.physical, cfg.mpc.com_reference);
    const double T = cfg.mpc.sampling_time;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    double worst = 0.0;
    for (int p = 0; p < 10; ++p) {
        const double t = (p * cfg.steps() / 10) * T;
        CentroidalState s0;
        s0.com_position = nominal(t) + Vector3(unit(rng), unit(rng), unit(rng)) * 0.05;
        s0.linear_momentum = Vector3(unit(rng), unit(rng), unit(rng));
        s0.angular_momentum = Vector3(unit(rng), unit(rng), unit(rng)) * 0.1;
        std::vector<Vector3> contacts;
        for (int i = 0; i < plan.num_contacts(); ++i) {
            contacts.push_back(plan.reference_phase(i, knot_query_time(plan, t, 0, T)).position);
        }
        const TranscriptionSetup setup = make_setup(s0, contacts, plan, nominal, cfg.physical, t,
                                                    cfg.estimated_disturbance_profile(t, cfg.mpc.horizon, T), cfg.mpc);
        const CentroidalTranscription tr(setup);
        const DecisionLayout& layout = tr.layout();
        VectorX x = cold_start(setup);
        for (Index j = 0; j < x.size(); ++j) {
            x(j) += unit(rng);
        }
        x.segment<3>(layout.com(0)) = s0.com_position;
        x.segment<3>(layout.linear_momentum(0)) = s0.linear_momentum;
        x.segment<3>(layout.angular_momentum(0)) = s0.angular_momentum;
        for (int i = 0; i < layout.num_contacts(); ++i) {
            if (const auto& pin = setup.pinned_contacts[static_cast<std::size_t>(i)]) {
                x.segment<3>(layout.contact_position(0, i)) = *pin;
            }
        }
        for (int k = 0; k < setup.horizon; ++k) {
            std::vector<ContactInstant> c(static_cast<std::size_t>(layout.num_contacts()));
            for (int i = 0; i < layout.num_contacts(); ++i) {
                auto& ci = c[static_cast<std::size_t>(i)];
                ci.active = setup.schedule(k, i);
                ci.position = x.segment<3>(layout.contact_position(k, i));
                ci.orientation = setup.contact_orientations[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)];
                ci.velocity = x.segment<3>(layout.contact_velocity(k, i));
                for (int j = 0; j < layout.corners(i); ++j) {
                    ci.corner_forces.push_back(x.segment<3>(layout.force(k, i, j)));
                }
            }
            CentroidalState s;
            s.com_position = x.segment<3>(layout.com(k));
            s.linear_momentum = x.segment<3>(layout.linear_momentum(k));
            s.angular_momentum = x.segment<3>(layout.angular_momentum(k));
            const auto r = integrate_step(s, c, setup.geometry, setup.params,
                                          setup.disturbance[static_cast<std::size_t>(k)], T);
            x.segment<3>(layout.com(k + 1)) = r.state.com_position;
            x.segment<3>(layout.linear_momentum(k + 1)) = r.state.linear_momentum;
            x.segment<3>(layout.angular_momentum(k + 1)) = r.state.angular_momentum;
            for (int i = 0; i < layout.num_contacts(); ++i) {
                x.segment<3>(layout.contact_position(k + 1, i)) = r.contact_positions[static_cast<std::size_t>(i)];
            }
        }
        const VectorX eq = tr.equalities(x);
        worst = std::max(worst, eq.head(tr.num_pin_rows() + tr.num_defect_rows()).cwiseAbs().maxCoeff());
    }
    return worst;
}

// Plant state after one control period against the first predicted state,
// with one plant substep and a perfect disturbance estimate.
double plant_vs_prediction(const ScenarioConfig& base)
{
    ScenarioConfig cfg = base;
    cfg.substeps = 1;
    for (auto& e : cfg.disturbances) {
        e.estimated_force = e.force;
    }
    std::vector<CentroidalState> predicted;
    SimulationHooks hooks;
    hooks.on_step = [&predicted](int, const MpcOutput& out) { predicted.push_back(out.predicted[1]); };
    const SimulationResult r = simulate(cfg, hooks);
    double worst = 0.0;
    for (std::size_t s = 0; s < predicted.size(); ++s) {
        const CentroidalState& plant = r.log.samples[s + 1].state;
        worst = std::max({worst, (plant.com_position - predicted[s].com_position).cwiseAbs().maxCoeff(),
                          (plant.momentum() - predicted[s].momentum()).cwiseAbs().maxCoeff()});
    }
    return worst;
}

// ---- criterion 6 -------------------------------------------------------------

struct FeasibilityAudit {
    double pyramid{0.0};
    double inactive_force{0.0};
    double box{0.0};
    int touchdowns{0};
    int moved_stance_samples{0};
};

FeasibilityAudit audit(const ScenarioConfig& cfg, const TrajectoryLog& log)
{
    const ContactPlan plan = cfg.plan();
    const FrictionPyramid pyramid = cfg.mpc.pyramid(cfg.physical);
    const double T = cfg.mpc.sampling_time;
    FeasibilityAudit a;
    for (std::size_t s = 0; s < log.steps.size(); ++s) {
        const double tq = knot_query_time(plan, log.samples[s].time, 0, T);
        for (std::size_t i = 0; i < log.contact_names.size(); ++i) {
            const Matrix3 R = plan.reference_phase(static_cast<int>(i), tq).orientation;
            for (const Vector3& f : log.steps[s].corner_forces[i]) {
                if (log.samples[s].active[i] != 0) {
                    a.pyramid = std::max(a.pyramid, pyramid.residual(R, f).maxCoeff());
                } else {
                    a.inactive_force = std::max(a.inactive_force, f.cwiseAbs().maxCoeff());
                }
            }
        }
    }
    for (const Touchdown& td : touchdowns(log)) {
        const double tq = knot_query_time(plan, td.time, 0, T);
        const Matrix3 R = plan.reference_phase(td.contact, tq).orientation;
        const ContactBoxCheck c = contact_box_violation(td.committed, td.nominal, R, cfg.mpc.box);
        a.box = std::max({a.box, (c.residual - c.upper).maxCoeff(), (c.lower - c.residual).maxCoeff()});
        ++a.touchdowns;
    }
    for (std::size_t s = 1; s < log.samples.size(); ++s) {
        for (std::size_t i = 0; i < log.contact_names.size(); ++i) {
            if (log.samples[s].active[i] != 0 && log.samples[s - 1].active[i] != 0
                && log.samples[s].contact_positions[i] != log.samples[s - 1].contact_positions[i]) {
                ++a.moved_stance_samples;
            }
        }
    }
    return a;
}

// ---- criterion 7 -------------------------------------------------------------

SparseMatrix sparse(const Eigen::MatrixXd& m)
{
    SparseMatrix s = m.sparseView();
    s.makeCompressed();
    return s;
}

QpProblem plain_qp(const Eigen::MatrixXd& h, const VectorX& g)
{
    QpProblem qp;
    qp.hessian = sparse(h);
    qp.gradient = g;
    qp.equality_matrix = SparseMatrix(0, g.size());
    qp.equality_rhs = VectorX();
    qp.inequality_matrix = SparseMatrix(0, g.size());
    qp.inequality_rhs = VectorX();
    return qp;
}

double qp_error(const QpProblem& qp, const VectorX& expected)
{
    const QpSolution s = qp_solve(qp);
    if (s.status != QpStatus::solved) {
        return std::numeric_limits<double>::infinity();
    }
    return (s.x - expected).cwiseAbs().maxCoeff();
}

void qp_oracles()
{
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(2, 2);
    double worst = qp_error(plain_qp(I, Eigen::Vector2d(-1, -1)), Eigen::Vector2d(1, 1));

    QpProblem eq = plain_qp(I, VectorX::Zero(2));
    eq.equality_matrix = sparse(Eigen::RowVector2d(1, 1));
    eq.equality_rhs = VectorX::Constant(1, 1.0);
    worst = std::max(worst, qp_error(eq, Eigen::Vector2d(0.5, 0.5)));

    QpProblem in = plain_qp(I, VectorX::Zero(2));
    in.inequality_matrix = sparse(Eigen::RowVector2d(-1, 0));
    in.inequality_rhs = VectorX::Constant(1, -1.0);
    worst = std::max(worst, qp_error(in, Eigen::Vector2d(1, 0)));

    // Random strictly convex QP with a known KKT point.
    std::mt19937 rng(7);
    std::normal_distribution<double> nd;
    const int n = 20;
    const int me = 4;
    const int mi = 12;
    const auto randm = [&](int r, int c) {
        Eigen::MatrixXd m(r, c);
        for (int i = 0; i < r; ++i) {
            for (int j = 0; j < c; ++j) {
                m(i, j) = nd(rng);
            }
        }
        return m;
    };
    const Eigen::MatrixXd a = randm(n, n);
    const Eigen::MatrixXd h = a.transpose() * a + Eigen::MatrixXd::Identity(n, n);
    const Eigen::MatrixXd e = randm(me, n);
    const Eigen::MatrixXd c = randm(mi, n);
    const VectorX xs = randm(n, 1);
    const VectorX ys = randm(me, 1);
    VectorX zs = VectorX::Zero(mi);
    VectorX rhs = c * xs;
    for (int i = 0; i < mi; ++i) {
        (i % 3 == 0 ? zs(i) : rhs(i)) += 0.5 + std::abs(nd(rng));
    }
    QpProblem kkt;
    kkt.hessian = sparse(h);
    kkt.gradient = -(h * xs + e.transpose() * ys + c.transpose() * zs);
    kkt.equality_matrix = sparse(e);
    kkt.equality_rhs = e * xs;
    kkt.inequality_matrix = sparse(c);
    kkt.inequality_rhs = rhs;
    worst = std::max(worst, qp_error(kkt, xs));

    report(7, worst <= 1e-8, format("max QP solution error over 4 oracle problems: %.2e (limit 1e-8)", worst));
}

// ---- criterion 8 -------------------------------------------------------------

bool same_csv(const TrajectoryLog& a, const TrajectoryLog& b, const std::string& tag)
{
    const fs::path da = fs::temp_directory_path() / ("cmpc_acceptance_" + tag + "_a");
    const fs::path db = fs::temp_directory_path() / ("cmpc_acceptance_" + tag + "_b");
    export_csv(a, da);
    export_csv(b, db);
    bool same = true;
    for (const char* f : {"states.csv", "contacts.csv", "forces.csv", "solver.csv"}) {
        same = same && test_support::read_text((da / f).string()) == test_support::read_text((db / f).string());
    }
    fs::remove_all(da);
    fs::remove_all(db);
    return same;
}

}  // namespace

int main()
{
    const ScenarioConfig one = test_support::bundled("one_leg_jump");
    const ScenarioConfig two = test_support::bundled("two_leg_walk_run");
    const std::vector<std::string> no_push{"disturbance.push.force_n=0 0 0"};

    // 1: single-leg jumping under a lateral push.
    const SimulationResult one_run = run(one);
    const SimulationResult one_base = run(test_support::bundled("one_leg_jump", no_push));
    {
        const auto& d = one_run.metrics.disturbed_adjustment;
        const auto& b = one_base.metrics.adjustment;
        const bool pass = in_band(d, 0.05, 0.20) && b.mean && *b.mean < 0.02;
        report(1, pass,
               format("one_leg disturbed adjustment mean %.4f m over %d touchdowns (band 0.05-0.20), "
                      "undisturbed mean %.4f m (limit 0.02)",
                      mean_or_nan(d), d.count, mean_or_nan(b)));
    }

    // 2: walking into running with a push.
    AerialMonitor aerial;
    std::optional<SimulationResult> two_run;
    std::string diverged;
    try {
        two_run = run(two, &aerial);
    } catch (const SimulationError& e) {
        diverged = e.what();
    }
    if (two_run) {
        const auto& d = two_run->metrics.disturbed_adjustment;
        const auto& all = two_run->metrics.adjustment;
        const bool pass = in_band(d, 0.03, 0.12) && aerial.knots > 0 && aerial.worst < 1e-9;
        report(2, pass,
               format("two_leg completed; disturbed adjustment mean %.4f m over %d touchdowns (band 0.03-0.12); "
                      "all-touchdown mean %.4f m over %d; max aerial angular momentum change %.1e over %d knots",
                      mean_or_nan(d), d.count, mean_or_nan(all), all.count, aerial.worst, aerial.knots));
    } else {
        report(2, false, "two_leg diverged: " + diverged);
    }

    // 3: real-time budget and convergence.
    {
        const Metrics& a = one_run.metrics;
        const Metrics b = two_run ? two_run->metrics : Metrics{};
        const double p95 = std::max(a.solve_time_p95_ms, b.solve_time_p95_ms);
        const double conv = std::min(a.convergence_rate, b.convergence_rate);
        report(3, two_run && p95 <= 250.0 && conv >= 0.95,
               format("solve time p95 one_leg %.1f ms, two_leg %.1f ms (limit 250); convergence %.1f%% / %.1f%% "
                      "(limit 95%%)",
                      a.solve_time_p95_ms, b.solve_time_p95_ms, 100.0 * a.convergence_rate,
                      100.0 * b.convergence_rate));
    }

    // 4: analytic derivatives.
    derivatives(one, two);

    // 5: dynamics consistency.
    {
        const double defects = std::max(rollout_defects(one, 3), rollout_defects(two, 4));
        const double plant = std::max(plant_vs_prediction(one), plant_vs_prediction(two));
        report(5, defects < 1e-12 && plant < 1e-12,
               format("max defect on rollouts %.1e (limit 1e-12); plant vs first predicted state %.1e (limit 1e-12)",
                      defects, plant));
    }

    // 6: constraint satisfaction of the applied plan.
    {
        FeasibilityAudit worst;
        bool ok = two_run.has_value();
        using Entry = std::pair<const ScenarioConfig*, const TrajectoryLog*>;
        for (const auto& [cfg, log] : {Entry{&one, &one_run.log}, Entry{&two, two_run ? &two_run->log : nullptr}}) {
            if (log == nullptr) {
                continue;
            }
            const FeasibilityAudit a = audit(*cfg, *log);
            worst.pyramid = std::max(worst.pyramid, a.pyramid);
            worst.inactive_force = std::max(worst.inactive_force, a.inactive_force);
            worst.box = std::max(worst.box, a.box);
            worst.touchdowns += a.touchdowns;
            worst.moved_stance_samples += a.moved_stance_samples;
        }
        ok = ok && worst.pyramid <= 1e-7 && worst.inactive_force == 0.0 && worst.box <= 1e-9
          && worst.moved_stance_samples == 0;
        report(6, ok,
               format("friction pyramid violation %.1e N (limit 1e-7); inactive force %.1e; box violation %.1e m "
                      "over %d touchdowns; stance contacts moved %d times",
                      worst.pyramid, worst.inactive_force, worst.box, worst.touchdowns, worst.moved_stance_samples));
    }

    // 7: QP solver against known solutions.
    qp_oracles();

    // 8: determinism.
    {
        const bool a = same_csv(one_run.log, run(one).log, "one");
        const bool b = two_run && same_csv(two_run->log, run(two).log, "two");
        report(8, a && b, format("repeat runs byte-identical: one_leg %s, two_leg %s", a ? "yes" : "no",
                                 b ? "yes" : "no"));
    }

    std::printf("%d of 8 criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
