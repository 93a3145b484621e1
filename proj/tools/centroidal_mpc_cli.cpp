#include "centroidal_mpc/centroidal_mpc.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

namespace cm = centroidal_mpc;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int exit_ok = 0;
constexpr int exit_failure = 1;
constexpr int exit_invalid = 2;
constexpr int exit_degraded = 3;

std::string read_file(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw cm::IoError("cannot read " + path);
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

json stats_json(const cm::AdjustmentStats& s)
{
    json j;
    j["count"] = s.count;
    j["mean_m"] = s.mean ? json(*s.mean) : json(nullptr);
    j["max_m"] = s.max ? json(*s.max) : json(nullptr);
    return j;
}

json metrics_json(const cm::Metrics& m)
{
    json j;
    j["adjustment"] = stats_json(m.adjustment);
    j["disturbed_adjustment"] = stats_json(m.disturbed_adjustment);
    j["steps"] = m.steps;
    j["solve_time_mean_ms"] = m.solve_time_mean_ms;
    j["solve_time_max_ms"] = m.solve_time_max_ms;
    j["solve_time_p95_ms"] = m.solve_time_p95_ms;
    j["convergence_rate"] = m.convergence_rate;
    j["max_constraint_violation"] = m.max_constraint_violation;
    j["degraded_steps"] = m.degraded_steps;
    return j;
}

void print_metrics(const cm::Metrics& m)
{
    const auto show = [](const char* label, const cm::AdjustmentStats& s) {
        if (s.mean) {
            std::printf("%-24s n=%d mean=%.4f m max=%.4f m\n", label, s.count, *s.mean, *s.max);
        } else {
            std::printf("%-24s n=0 (no touchdowns)\n", label);
        }
    };
    show("adjustment", m.adjustment);
    show("disturbed adjustment", m.disturbed_adjustment);
    std::printf("%-24s mean=%.1f ms p95=%.1f ms max=%.1f ms\n", "solve time", m.solve_time_mean_ms,
                m.solve_time_p95_ms, m.solve_time_max_ms);
    std::printf("%-24s %.1f%% (%d degraded of %d)\n", "convergence", 100.0 * m.convergence_rate, m.degraded_steps,
                m.steps);
    std::printf("%-24s %.3g\n", "max violation", m.max_constraint_violation);
}

int run(const std::string& scenario, const std::string& out_dir, const std::vector<std::string>& overrides)
{
    const std::string text = read_file(scenario);
    const cm::ScenarioConfig cfg = cm::parse_scenario(text, overrides);
    const fs::path dir = out_dir.empty() ? fs::path(cfg.output_dir) : fs::path(out_dir);

    const cm::SimulationResult result = cm::simulate(cfg);
    cm::export_csv(result.log, dir);

    std::string fingerprint = text;
    for (const auto& o : overrides) {
        fingerprint += "\n" + o;
    }
    char hash[17];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(cm::fnv1a(fingerprint)));
    json manifest;
    manifest["scenario"] = scenario;
    manifest["name"] = cfg.name;
    manifest["config_hash"] = hash;
    manifest["overrides"] = overrides;
    manifest["metrics"] = metrics_json(result.metrics);
    std::vector<double> times;
    for (const auto& st : result.log.steps) {
        times.push_back(st.solve_time_ms);
    }
    manifest["solve_time_ms"] = times;
    std::ofstream mf(dir / "run_manifest.json");
    if (!mf) {
        throw cm::IoError("cannot write " + (dir / "run_manifest.json").string());
    }
    mf << manifest.dump(2) << '\n';

    std::printf("wrote %s\n", dir.string().c_str());
    print_metrics(result.metrics);
    return result.metrics.degraded_steps > 0 ? exit_degraded : exit_ok;
}

int check_derivatives(const std::string& scenario, int points, double step, unsigned seed)
{
    const cm::ScenarioConfig cfg = cm::parse_scenario(read_file(scenario));
    const cm::DerivativeSweep r = cm::derivative_sweep(cfg, points, step, seed);
    std::printf("max relative error over %d points: %.3e (%s row %lld col %lld at t=%.2f)\n", r.points, r.worst,
                cm::to_string(r.worst_report.worst_block), static_cast<long long>(r.worst_report.worst_row),
                static_cast<long long>(r.worst_report.worst_col), r.worst_time);
    return r.worst < 1e-5 ? exit_ok : exit_failure;
}

int metrics(const std::string& dir)
{
    cm::TrajectoryLog log = cm::load_log(dir);
    const fs::path manifest_path = fs::path(dir) / "run_manifest.json";
    if (fs::exists(manifest_path)) {
        std::ifstream in(manifest_path);
        const json m = json::parse(in);
        const auto times = m.at("solve_time_ms").get<std::vector<double>>();
        if (times.size() == log.steps.size()) {
            for (std::size_t k = 0; k < times.size(); ++k) {
                log.steps[k].solve_time_ms = times[k];
            }
        }
    }
    print_metrics(cm::compute_metrics(log));
    return exit_ok;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Centroidal MPC with contact location adjustment"};
    app.require_subcommand(1);

    std::string scenario;
    std::string out_dir;
    std::vector<std::string> overrides;
    auto* run_cmd = app.add_subcommand("run", "Run a closed-loop simulation and write CSV logs");
    run_cmd->add_option("scenario", scenario, "Scenario file")->required();
    run_cmd->add_option("--out", out_dir, "Output directory (default: simulation.output_dir)");
    run_cmd->add_option("--override", overrides, "section.key=value, repeatable");

    int points = 100;
    double step = 1e-6;
    unsigned seed = 1;
    auto* check_cmd = app.add_subcommand("check-derivatives", "Compare analytic and finite-difference derivatives");
    check_cmd->add_option("scenario", scenario, "Scenario file")->required();
    check_cmd->add_option("--points", points, "Random evaluation points")->check(CLI::PositiveNumber);
    check_cmd->add_option("--step", step, "Central-difference step")->check(CLI::PositiveNumber);
    check_cmd->add_option("--seed", seed, "Random seed");

    std::string log_dir;
    auto* metrics_cmd = app.add_subcommand("metrics", "Recompute metrics from a log directory");
    metrics_cmd->add_option("log-dir", log_dir, "Directory written by run")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? exit_ok : exit_invalid;
    }

    try {
        if (*run_cmd) {
            return run(scenario, out_dir, overrides);
        }
        if (*check_cmd) {
            return check_derivatives(scenario, points, step, seed);
        }
        return metrics(log_dir);
    } catch (const cm::ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return exit_invalid;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return exit_failure;
    }
}
