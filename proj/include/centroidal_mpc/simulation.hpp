#pragma once

// Closed-loop simulation: the plant is the centroidal model itself, driven by
// the MPC's knot-0 forces (held over the control period, integrated in
// substeps) and by the true disturbance. Touchdowns are placed at the MPC's
// adjusted landing position when the contact switches on.

#include "centroidal_mpc/controller.hpp"
#include "centroidal_mpc/derivative_check.hpp"
#include "centroidal_mpc/log.hpp"
#include "centroidal_mpc/scenario.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace centroidal_mpc {

class SimulationError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// Plant state at one control instant (steps + 1 of these).
struct LogSample {
    double time{0.0};
    CentroidalState state;
    Vector3 nominal_com{Vector3::Zero()};
    Vector3 disturbance{Vector3::Zero()};      // true force acting from this instant
    std::vector<char> active;                  // per contact
    std::vector<Vector3> contact_positions;    // committed position (held while in swing)
    std::vector<Vector3> nominal_contacts;     // plan position of the current or next phase
};

/// One MPC solve and the control it produced (steps of these).
struct LogStep {
    double time{0.0};
    std::vector<std::vector<Vector3>> corner_forces;  // applied, [contact][corner]
    std::string status;
    int iterations{0};
    double kkt_residual{0.0};
    double constraint_violation{0.0};
    double cost{0.0};
    double solve_time_ms{0.0};
    bool degraded{false};
};

struct TrajectoryLog {
    std::vector<std::string> contact_names;
    std::vector<int> corners;
    double sampling_time{0.0};
    std::vector<LogSample> samples;
    std::vector<LogStep> steps;

    [[nodiscard]] int total_corners() const
    {
        int n = 0;
        for (int c : corners) {
            n += c;
        }
        return n;
    }
};

struct Touchdown {
    int contact{0};
    int sample{0};
    double time{0.0};
    Vector3 committed{Vector3::Zero()};
    Vector3 nominal{Vector3::Zero()};
    bool disturbed{false};  // a disturbance acted during the swing that led here

    /// Distance from the nominal footstep in the ground plane.
    [[nodiscard]] double adjustment() const { return (committed - nominal).head<2>().norm(); }
};

/// Touchdowns are contact onsets after the first sample. The swing of a
/// contact that starts in the air begins at t = 0.
inline std::vector<Touchdown> touchdowns(const TrajectoryLog& log)
{
    std::vector<Touchdown> out;
    const int nc = static_cast<int>(log.contact_names.size());
    for (int i = 0; i < nc; ++i) {
        const auto ii = static_cast<std::size_t>(i);
        std::size_t liftoff = 0;
        for (std::size_t s = 1; s < log.samples.size(); ++s) {
            const bool now = log.samples[s].active[ii] != 0;
            const bool before = log.samples[s - 1].active[ii] != 0;
            if (before && !now) {
                liftoff = s;
            }
            if (now && !before) {
                Touchdown td;
                td.contact = i;
                td.sample = static_cast<int>(s);
                td.time = log.samples[s].time;
                td.committed = log.samples[s].contact_positions[ii];
                td.nominal = log.samples[s].nominal_contacts[ii];
                for (std::size_t q = liftoff; q < s; ++q) {
                    td.disturbed = td.disturbed || !log.samples[q].disturbance.isZero(0.0);
                }
                out.push_back(td);
            }
        }
    }
    std::stable_sort(out.begin(), out.end(), [](const Touchdown& a, const Touchdown& b) { return a.sample < b.sample; });
    return out;
}

struct AdjustmentStats {
    int count{0};
    std::optional<double> mean;  // empty when there were no touchdowns
    std::optional<double> max;
};

struct Metrics {
    AdjustmentStats adjustment;            // all touchdowns
    AdjustmentStats disturbed_adjustment;  // touchdowns whose swing saw a disturbance
    int steps{0};
    double solve_time_mean_ms{0.0};
    double solve_time_max_ms{0.0};
    double solve_time_p95_ms{0.0};
    double convergence_rate{0.0};
    double max_constraint_violation{0.0};
    int degraded_steps{0};
};

inline AdjustmentStats adjustment_stats(const std::vector<Touchdown>& tds, bool disturbed_only)
{
    AdjustmentStats st;
    double sum = 0.0;
    double mx = 0.0;
    for (const auto& td : tds) {
        if (disturbed_only && !td.disturbed) {
            continue;
        }
        ++st.count;
        sum += td.adjustment();
        mx = std::max(mx, td.adjustment());
    }
    if (st.count > 0) {
        st.mean = sum / st.count;
        st.max = mx;
    }
    return st;
}

/// Nearest-rank percentile.
inline double percentile(std::vector<double> v, double p)
{
    if (v.empty()) {
        return 0.0;
    }
    std::sort(v.begin(), v.end());
    const auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(v.size())));
    return v[std::clamp<std::size_t>(rank, 1, v.size()) - 1];
}

inline Metrics compute_metrics(const TrajectoryLog& log)
{
    if (log.samples.empty()) {
        throw InputError("compute_metrics: empty log");
    }
    Metrics m;
    const auto tds = touchdowns(log);
    m.adjustment = adjustment_stats(tds, false);
    m.disturbed_adjustment = adjustment_stats(tds, true);
    m.steps = static_cast<int>(log.steps.size());
    std::vector<double> times;
    int converged = 0;
    for (const auto& st : log.steps) {
        times.push_back(st.solve_time_ms);
        converged += st.status == "converged" ? 1 : 0;
        m.degraded_steps += st.degraded ? 1 : 0;
        m.max_constraint_violation = std::max(m.max_constraint_violation, st.constraint_violation);
    }
    if (!times.empty()) {
        double sum = 0.0;
        for (double t : times) {
            sum += t;
        }
        m.solve_time_mean_ms = sum / static_cast<double>(times.size());
        m.solve_time_max_ms = *std::max_element(times.begin(), times.end());
        m.solve_time_p95_ms = percentile(times, 95.0);
        m.convergence_rate = static_cast<double>(converged) / static_cast<double>(times.size());
    }
    return m;
}

struct SimulationResult {
    TrajectoryLog log;
    Metrics metrics;
};

struct SimulationHooks {
    /// Called after every MPC solve, before the plant step.
    std::function<void(int step, const MpcOutput&)> on_step;
};

inline CentroidalState initial_state(const ScenarioConfig& cfg, const QuinticSpline& nominal_com)
{
    CentroidalState s;
    s.com_position = cfg.initial_com.value_or(nominal_com(0.0));
    s.linear_momentum = cfg.initial_linear_momentum;
    s.angular_momentum = cfg.initial_angular_momentum;
    return s;
}

inline SimulationResult simulate(const ScenarioConfig& cfg, const SimulationHooks& hooks = {})
{
    cfg.validate();
    const ContactPlan plan = cfg.plan();
    CentroidalMpc mpc(plan, cfg.physical, cfg.mpc);
    const double T = cfg.mpc.sampling_time;
    const int nc = plan.num_contacts();
    const auto geometry = plan.geometries();

    TrajectoryLog log;
    log.sampling_time = T;
    for (const auto& c : plan.contacts()) {
        log.contact_names.push_back(c.name);
        log.corners.push_back(c.geometry.size());
    }

    CentroidalState state = initial_state(cfg, mpc.nominal_com());
    std::vector<Vector3> positions(static_cast<std::size_t>(nc));
    std::vector<char> active(static_cast<std::size_t>(nc), 0);
    std::optional<MpcOutput> last;

    const int steps = cfg.steps();
    for (int s = 0; s <= steps; ++s) {
        const double t = s * T;
        const double tq = knot_query_time(plan, t, 0, T);
        LogSample sample;
        sample.time = t;
        for (int i = 0; i < nc; ++i) {
            const auto ii = static_cast<std::size_t>(i);
            const bool now = plan.activation(i, tq);
            const ContactPhase& ref = plan.reference_phase(i, tq);
            if (s == 0) {
                positions[ii] = ref.position;
            } else if (now && active[ii] == 0) {
                Vector3 p = ref.position;
                if (last && last->adjusted_contacts[ii] && last->landing_knot[ii] == 1) {
                    p = *last->adjusted_contacts[ii];
                } else {
                    CMPC_LOG_INFO("t=%.3f: no landing position for contact '%s', using nominal", t,
                                  plan.contact(i).name.c_str());
                }
                positions[ii] = project_into_box(p, ref.position, ref.orientation, cfg.mpc.box);
            }
            active[ii] = now ? 1 : 0;
            sample.nominal_contacts.push_back(ref.position);
        }
        sample.state = state;
        sample.nominal_com = mpc.nominal_com()(t);
        sample.disturbance = cfg.true_disturbance(t).force;
        sample.active = active;
        sample.contact_positions = positions;
        log.samples.push_back(std::move(sample));
        if (s == steps) {
            break;
        }

        if (!state.is_finite() || state.com_position.cwiseAbs().maxCoeff() > 1e3) {
            throw SimulationError("plant diverged at t = " + std::to_string(t) + " s");
        }

        const std::vector<ExternalWrench> estimate =
            cfg.estimated_disturbance_profile(t, cfg.mpc.horizon, cfg.mpc.sampling_time);
        MpcOutput out = mpc.step(state, positions, t, estimate);
        if (out.degraded) {
            CMPC_LOG_INFO("t=%.3f: degraded solve (%s after %d iterations)", t, to_string(out.solution.status),
                          out.solution.iterations);
        }
        CMPC_LOG_DEBUG("t=%.3f: %s, %d iterations, %.1f ms", t, to_string(out.solution.status),
                       out.solution.iterations, out.solution.solve_time_ms);
        if (hooks.on_step) {
            hooks.on_step(s, out);
        }

        std::vector<ContactInstant> contacts(static_cast<std::size_t>(nc));
        for (int i = 0; i < nc; ++i) {
            const auto ii = static_cast<std::size_t>(i);
            contacts[ii].active = active[ii] != 0;
            contacts[ii].position = positions[ii];
            contacts[ii].orientation = plan.reference_phase(i, tq).orientation;
            contacts[ii].corner_forces = out.corner_forces[ii];
            contacts[ii].velocity = Vector3::Zero();
        }
        const double dt = T / cfg.substeps;
        for (int q = 0; q < cfg.substeps; ++q) {
            const ExternalWrench w = cfg.true_disturbance(t + q * dt);
            state = integrate_step(state, contacts, geometry, cfg.physical, w, dt).state;
        }

        LogStep step;
        step.time = t;
        step.corner_forces = out.corner_forces;
        step.status = to_string(out.solution.status);
        step.iterations = out.solution.iterations;
        step.kkt_residual = out.solution.kkt_residual;
        step.constraint_violation = out.solution.constraint_violation;
        step.cost = out.solution.cost;
        step.solve_time_ms = out.solution.solve_time_ms;
        step.degraded = out.degraded;
        log.steps.push_back(std::move(step));
        last = std::move(out);
    }

    SimulationResult r;
    r.metrics = compute_metrics(log);
    r.log = std::move(log);
    return r;
}

// ---- CSV ------------------------------------------------------------------------

namespace detail {

inline std::string fmt9(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v == 0.0 ? 0.0 : v);
    return buf;
}

inline void put_row(std::ofstream& out, const std::vector<std::string>& cells)
{
    for (std::size_t c = 0; c < cells.size(); ++c) {
        out << (c == 0 ? "" : ",") << cells[c];
    }
    out << '\n';
}

inline void put_vec(std::vector<std::string>& cells, const Vector3& v)
{
    for (int a = 0; a < 3; ++a) {
        cells.push_back(fmt9(v(a)));
    }
}

inline std::ofstream open_csv(const std::filesystem::path& p)
{
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot write " + p.string());
    }
    return out;
}

inline const char* const axes[] = {"x", "y", "z"};

}  // namespace detail

/// Writes states.csv, contacts.csv, forces.csv and solver.csv into dir.
inline void export_csv(const TrajectoryLog& log, const std::filesystem::path& dir)
{
    using namespace detail;
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) {
        throw IoError("cannot create " + dir.string() + ": " + ec.message());
    }
    {
        auto out = open_csv(dir / "states.csv");
        std::vector<std::string> h{"time_s"};
        for (const char* a : axes) h.push_back(std::string("com_") + a + "_m");
        for (const char* a : axes) h.push_back(std::string("linear_momentum_") + a + "_kgmps");
        for (const char* a : axes) h.push_back(std::string("angular_momentum_") + a + "_kgm2ps");
        for (const char* a : axes) h.push_back(std::string("nominal_com_") + a + "_m");
        for (const char* a : axes) h.push_back(std::string("disturbance_") + a + "_n");
        put_row(out, h);
        for (const auto& s : log.samples) {
            std::vector<std::string> c{fmt9(s.time)};
            put_vec(c, s.state.com_position);
            put_vec(c, s.state.linear_momentum);
            put_vec(c, s.state.angular_momentum);
            put_vec(c, s.nominal_com);
            put_vec(c, s.disturbance);
            put_row(out, c);
        }
    }
    {
        auto out = open_csv(dir / "contacts.csv");
        std::vector<std::string> h{"time_s"};
        for (const auto& n : log.contact_names) {
            h.push_back(n + "_active");
            for (const char* a : axes) h.push_back(n + "_" + a + "_m");
            for (const char* a : axes) h.push_back(n + "_nominal_" + a + "_m");
        }
        put_row(out, h);
        for (const auto& s : log.samples) {
            std::vector<std::string> c{fmt9(s.time)};
            for (std::size_t i = 0; i < log.contact_names.size(); ++i) {
                c.push_back(s.active[i] != 0 ? "1" : "0");
                put_vec(c, s.contact_positions[i]);
                put_vec(c, s.nominal_contacts[i]);
            }
            put_row(out, c);
        }
    }
    {
        auto out = open_csv(dir / "forces.csv");
        std::vector<std::string> h{"time_s"};
        for (std::size_t i = 0; i < log.contact_names.size(); ++i) {
            for (int j = 0; j < log.corners[i]; ++j) {
                for (const char* a : axes) {
                    h.push_back(log.contact_names[i] + "_c" + std::to_string(j) + "_f" + a + "_n");
                }
            }
        }
        put_row(out, h);
        for (const auto& st : log.steps) {
            std::vector<std::string> c{fmt9(st.time)};
            for (const auto& contact : st.corner_forces) {
                for (const auto& f : contact) {
                    put_vec(c, f);
                }
            }
            put_row(out, c);
        }
    }
    {
        auto out = open_csv(dir / "solver.csv");
        put_row(out, {"time_s", "status", "iterations", "kkt_residual", "constraint_violation", "cost", "degraded"});
        for (const auto& st : log.steps) {
            put_row(out, {fmt9(st.time), st.status, std::to_string(st.iterations), fmt9(st.kkt_residual),
                          fmt9(st.constraint_violation), fmt9(st.cost), st.degraded ? "1" : "0"});
        }
    }
}

namespace detail {

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    [[nodiscard]] std::size_t column(const std::string& name, const std::string& file) const
    {
        const auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) {
            throw IoError(file + ": missing column " + name);
        }
        return static_cast<std::size_t>(it - header.begin());
    }
};

inline CsvTable read_csv(const std::filesystem::path& p)
{
    std::ifstream in(p, std::ios::binary);
    if (!in) {
        throw IoError("cannot read " + p.string());
    }
    CsvTable t;
    std::string line;
    const auto split = [](const std::string& l) {
        std::vector<std::string> cells;
        std::size_t start = 0;
        while (true) {
            const auto comma = l.find(',', start);
            cells.push_back(l.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
            if (comma == std::string::npos) {
                break;
            }
            start = comma + 1;
        }
        return cells;
    };
    if (!std::getline(in, line)) {
        throw IoError(p.string() + ": empty file");
    }
    t.header = split(line);
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        auto cells = split(line);
        if (cells.size() != t.header.size()) {
            throw IoError(p.string() + ": row " + std::to_string(t.rows.size() + 2) + " has "
                          + std::to_string(cells.size()) + " cells, header has " + std::to_string(t.header.size()));
        }
        t.rows.push_back(std::move(cells));
    }
    return t;
}

inline double cell(const std::string& s, const std::filesystem::path& file)
{
    try {
        return std::stod(s);
    } catch (const std::logic_error&) {
        throw IoError(file.string() + ": not a number: '" + s + "'");
    }
}

}  // namespace detail

/// Reads a log written by export_csv. Solve times are not part of the CSV
/// set and come back as zero.
inline TrajectoryLog load_log(const std::filesystem::path& dir)
{
    using namespace detail;
    TrajectoryLog log;
    const auto states_path = dir / "states.csv";
    const auto contacts_path = dir / "contacts.csv";
    const auto forces_path = dir / "forces.csv";
    const auto solver_path = dir / "solver.csv";
    const CsvTable states = read_csv(states_path);
    const CsvTable contacts = read_csv(contacts_path);
    const CsvTable forces = read_csv(forces_path);
    const CsvTable solver = read_csv(solver_path);

    for (const auto& h : contacts.header) {
        if (h.size() > 7 && h.ends_with("_active")) {
            log.contact_names.push_back(h.substr(0, h.size() - 7));
        }
    }
    for (const auto& n : log.contact_names) {
        int corners = 0;
        while (std::find(forces.header.begin(), forces.header.end(), n + "_c" + std::to_string(corners) + "_fx_n")
               != forces.header.end()) {
            ++corners;
        }
        log.corners.push_back(corners);
    }
    if (states.rows.size() != contacts.rows.size()) {
        throw IoError(dir.string() + ": states.csv and contacts.csv differ in length");
    }

    const auto vec = [](const std::vector<std::string>& row, std::size_t col, const std::filesystem::path& f) {
        return Vector3(cell(row[col], f), cell(row[col + 1], f), cell(row[col + 2], f));
    };
    const std::size_t c_com = states.column("com_x_m", "states.csv");
    const std::size_t c_hl = states.column("linear_momentum_x_kgmps", "states.csv");
    const std::size_t c_ha = states.column("angular_momentum_x_kgm2ps", "states.csv");
    const std::size_t c_nc = states.column("nominal_com_x_m", "states.csv");
    const std::size_t c_d = states.column("disturbance_x_n", "states.csv");
    for (std::size_t r = 0; r < states.rows.size(); ++r) {
        const auto& row = states.rows[r];
        LogSample s;
        s.time = cell(row[0], states_path);
        s.state.com_position = vec(row, c_com, states_path);
        s.state.linear_momentum = vec(row, c_hl, states_path);
        s.state.angular_momentum = vec(row, c_ha, states_path);
        s.nominal_com = vec(row, c_nc, states_path);
        s.disturbance = vec(row, c_d, states_path);
        const auto& crow = contacts.rows[r];
        for (const auto& n : log.contact_names) {
            s.active.push_back(cell(crow[contacts.column(n + "_active", "contacts.csv")], contacts_path) != 0.0 ? 1 : 0);
            s.contact_positions.push_back(vec(crow, contacts.column(n + "_x_m", "contacts.csv"), contacts_path));
            s.nominal_contacts.push_back(vec(crow, contacts.column(n + "_nominal_x_m", "contacts.csv"), contacts_path));
        }
        log.samples.push_back(std::move(s));
    }
    if (log.samples.size() >= 2) {
        log.sampling_time = log.samples[1].time - log.samples[0].time;
    }

    if (forces.rows.size() != solver.rows.size()) {
        throw IoError(dir.string() + ": forces.csv and solver.csv differ in length");
    }
    const std::size_t c_status = solver.column("status", "solver.csv");
    const std::size_t c_it = solver.column("iterations", "solver.csv");
    const std::size_t c_kkt = solver.column("kkt_residual", "solver.csv");
    const std::size_t c_viol = solver.column("constraint_violation", "solver.csv");
    const std::size_t c_cost = solver.column("cost", "solver.csv");
    const std::size_t c_deg = solver.column("degraded", "solver.csv");
    for (std::size_t r = 0; r < solver.rows.size(); ++r) {
        const auto& row = solver.rows[r];
        LogStep st;
        st.time = cell(row[0], solver_path);
        st.status = row[c_status];
        st.iterations = static_cast<int>(cell(row[c_it], solver_path));
        st.kkt_residual = cell(row[c_kkt], solver_path);
        st.constraint_violation = cell(row[c_viol], solver_path);
        st.cost = cell(row[c_cost], solver_path);
        st.degraded = row[c_deg] == "1";
        std::size_t col = 1;
        for (int corners : log.corners) {
            std::vector<Vector3> fs;
            for (int j = 0; j < corners; ++j, col += 3) {
                fs.push_back(vec(forces.rows[r], col, forces_path));
            }
            st.corner_forces.push_back(std::move(fs));
        }
        log.steps.push_back(std::move(st));
    }
    return log;
}

// ---- derivative sweep ------------------------------------------------------------

struct DerivativeSweep {
    double worst{0.0};
    double worst_time{0.0};
    DerivativeReport worst_report;
    int points{0};
};

/// Checks the transcription derivatives at random points: a random MPC step
/// time, and the cold start perturbed by U(-1, 1) in every coordinate.
inline DerivativeSweep derivative_sweep(const ScenarioConfig& cfg, int points, double fd_step, unsigned seed)
{
    if (points < 1) {
        throw ConfigError("derivative_sweep: points must be >= 1");
    }
    const ContactPlan plan = cfg.plan();
    const QuinticSpline nominal = nominal_com_trajectory(plan, cfg.physical, cfg.mpc.com_reference);
    const double T = cfg.mpc.sampling_time;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    std::uniform_int_distribution<int> step_index(0, std::max(0, cfg.steps() - 1));

    DerivativeSweep out;
    for (int p = 0; p < points; ++p) {
        const double t = step_index(rng) * T;
        const CentroidalState s0 = initial_state(cfg, nominal);
        std::vector<Vector3> contacts;
        for (int i = 0; i < plan.num_contacts(); ++i) {
            contacts.push_back(plan.reference_phase(i, knot_query_time(plan, t, 0, T)).position);
        }
        const TranscriptionSetup setup =
            make_setup(s0, contacts, plan, nominal, cfg.physical, t,
                       cfg.estimated_disturbance_profile(t, cfg.mpc.horizon, T), cfg.mpc);
        const NlpProblem nlp = build_nlp(setup);
        VectorX x = cold_start(setup);
        for (Index j = 0; j < x.size(); ++j) {
            x(j) += unit(rng);
        }
        const DerivativeReport r = check_derivatives(nlp, x, fd_step);
        CMPC_LOG_INFO("point %d (t=%.2f): %.3e in %s (%lld, %lld)", p, t, r.max_relative_error,
                      to_string(r.worst_block), static_cast<long long>(r.worst_row),
                      static_cast<long long>(r.worst_col));
        if (p == 0 || r.max_relative_error > out.worst) {
            out.worst = r.max_relative_error;
            out.worst_time = t;
            out.worst_report = r;
        }
        ++out.points;
    }
    return out;
}

}  // namespace centroidal_mpc
