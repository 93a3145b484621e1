#pragma once

// Scenario files.
//
//   format_version = 1
//
//   [physical]
//   mass_kg = 1.0
//   gravity_mps2 = 0 0 -9.81
//
//   [contact.foot]
//   shape = point
//
//   [contact.foot.phases]
//   t_start_s t_end_s x_m y_m z_m yaw_rad
//   0.0       0.4     0   0   0   0
//
// Sections hold `key = value` lines; vectors are whitespace separated.
// Phase tables start with the header row above. `#` starts a comment.

#include "centroidal_mpc/controller.hpp"

#include <array>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace centroidal_mpc {

class ParseError : public ConfigError {
public:
    ParseError(int line, const std::string& what)
        : ConfigError("line " + std::to_string(line) + ": " + what), line_(line)
    {
    }
    [[nodiscard]] int line() const { return line_; }

private:
    int line_;
};

class ValidationError : public ConfigError {
public:
    explicit ValidationError(std::vector<std::string> problems)
        : ConfigError(join(problems)), problems_(std::move(problems))
    {
    }
    [[nodiscard]] const std::vector<std::string>& problems() const { return problems_; }

private:
    static std::string join(const std::vector<std::string>& p)
    {
        std::string s = "invalid scenario:";
        for (const auto& m : p) {
            s += "\n  - " + m;
        }
        return s;
    }
    std::vector<std::string> problems_;
};

struct DisturbanceEvent {
    std::string name;
    double start{0.0};
    double duration{0.0};
    Vector3 force{Vector3::Zero()};
    Vector3 estimated_force{Vector3::Zero()};

    [[nodiscard]] bool active(double t) const { return t >= start && t < start + duration; }
};

struct ScenarioConfig {
    std::string name;
    PhysicalParams physical;
    std::vector<NominalContact> contacts;
    double plan_duration{0.0};
    MpcOptions mpc;
    std::optional<Vector3> initial_com;
    Vector3 initial_linear_momentum{Vector3::Zero()};
    Vector3 initial_angular_momentum{Vector3::Zero()};
    std::vector<DisturbanceEvent> disturbances;
    double duration{0.0};
    int substeps{10};
    std::string output_dir{"out"};
    bool hold_disturbance_over_horizon{false};

    [[nodiscard]] ContactPlan plan() const { return ContactPlan(contacts, plan_duration); }

    [[nodiscard]] int steps() const
    {
        return static_cast<int>(std::floor(duration / mpc.sampling_time + 1e-9));
    }

    [[nodiscard]] ExternalWrench true_disturbance(double t) const
    {
        ExternalWrench w;
        for (const auto& e : disturbances) {
            if (e.active(t)) {
                w.force += e.force;
            }
        }
        return w;
    }

    [[nodiscard]] ExternalWrench estimated_disturbance(double t) const
    {
        ExternalWrench w;
        for (const auto& e : disturbances) {
            if (e.active(t)) {
                w.force += e.estimated_force;
            }
        }
        return w;
    }

    /// Estimate for each of `knots` intervals starting at t. Only events
    /// already acting at t contribute; with `hold_over_horizon` they cover
    /// every knot, otherwise only knots inside the event window.
    [[nodiscard]] std::vector<ExternalWrench> estimated_disturbance_profile(double t, int knots,
                                                                            double sampling_time) const
    {
        std::vector<ExternalWrench> out(static_cast<std::size_t>(std::max(knots, 0)));
        for (const auto& e : disturbances) {
            if (!e.active(t)) {
                continue;
            }
            for (int k = 0; k < knots; ++k) {
                if (hold_disturbance_over_horizon || e.active(t + k * sampling_time)) {
                    out[static_cast<std::size_t>(k)].force += e.estimated_force;
                }
            }
        }
        return out;
    }

    /// Every problem found, not just the first.
    [[nodiscard]] std::vector<std::string> problems() const
    {
        std::vector<std::string> out;
        const auto guard = [&out](const char* field, auto&& check) {
            try {
                check();
            } catch (const Error& e) {
                out.push_back(std::string(field) + ": " + e.what());
            }
        };
        if (!(physical.mass > 0.0) || !std::isfinite(physical.mass)) {
            out.emplace_back("physical.mass_kg must be positive");
        }
        if (!all_finite(physical.gravity)) {
            out.emplace_back("physical.gravity_mps2 must be finite");
        }
        if (!(physical.com_height_nominal > 0.0)) {
            out.emplace_back("physical.com_height_nominal_m must be positive");
        }
        if (contacts.empty()) {
            out.emplace_back("at least one [contact.<name>] section is required");
        }
        if (!(duration > 0.0)) {
            out.emplace_back("simulation.duration_s must be positive");
        }
        if (substeps < 1) {
            out.emplace_back("simulation.plant_substeps must be >= 1");
        }
        if (!(plan_duration > 0.0)) {
            out.emplace_back("simulation.plan_duration_s must be positive");
        }
        if (mpc.horizon < 2) {
            out.emplace_back("mpc.horizon_knots must be >= 2");
        }
        if (!(mpc.sampling_time > 0.0)) {
            out.emplace_back("mpc.sampling_time_s must be positive");
        }
        if (out.empty()) {
            guard("mpc", [&] { mpc.validate(physical); });
            guard("contacts", [&] { (void)plan(); });
        }
        for (const auto& e : disturbances) {
            const std::string f = "disturbance." + e.name;
            if (!(e.duration > 0.0)) {
                out.push_back(f + ".duration_s must be positive");
            }
            if (e.start < 0.0 || e.start + e.duration > duration + 1e-12) {
                out.push_back(f + " must lie within the simulation duration");
            }
            if (!all_finite(e.force) || !all_finite(e.estimated_force)) {
                out.push_back(f + ".force_n must be finite");
            }
        }
        return out;
    }

    void validate() const
    {
        if (auto p = problems(); !p.empty()) {
            throw ValidationError(std::move(p));
        }
    }
};

namespace detail {

struct RawEntry {
    std::string value;
    int line{0};
    bool used{false};
};

struct RawSection {
    std::string name;
    int line{0};
    std::map<std::string, RawEntry> entries;
    std::vector<std::pair<int, std::vector<std::string>>> rows;  // tables only
    bool table{false};
};

inline std::string trim(std::string_view s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_ws(const std::string& s)
{
    std::istringstream in(s);
    std::vector<std::string> out;
    for (std::string tok; in >> tok;) {
        out.push_back(tok);
    }
    return out;
}

inline double to_double(const std::string& s, int line, const std::string& key)
{
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) {
            throw std::invalid_argument(s);
        }
        return v;
    } catch (const std::logic_error&) {
        throw ParseError(line, key + ": expected a number, got '" + s + "'");
    }
}

inline const std::vector<std::string>& phase_columns()
{
    static const std::vector<std::string> cols{"t_start_s", "t_end_s", "x_m", "y_m", "z_m", "yaw_rad"};
    return cols;
}

class Reader {
public:
    Reader(std::vector<RawSection> sections, RawSection root) : sections_(std::move(sections)), root_(std::move(root)) {}

    RawSection* find(const std::string& name)
    {
        for (auto& s : sections_) {
            if (s.name == name) {
                return &s;
            }
        }
        return nullptr;
    }

    RawSection& require(const std::string& name)
    {
        RawSection* s = find(name);
        if (s == nullptr) {
            throw ConfigError("missing required section: " + name);
        }
        return *s;
    }

    std::vector<RawSection*> with_prefix(const std::string& prefix)
    {
        std::vector<RawSection*> out;
        for (auto& s : sections_) {
            if (s.name.rfind(prefix, 0) == 0 && s.name.size() > prefix.size()) {
                out.push_back(&s);
            }
        }
        return out;
    }

    RawSection& root() { return root_; }
    std::vector<RawSection>& sections() { return sections_; }

    static const RawEntry* entry(RawSection& s, const std::string& key)
    {
        auto it = s.entries.find(key);
        if (it == s.entries.end()) {
            return nullptr;
        }
        it->second.used = true;
        return &it->second;
    }

    static std::optional<double> number(RawSection& s, const std::string& key)
    {
        const RawEntry* e = entry(s, key);
        if (e == nullptr) {
            return std::nullopt;
        }
        return to_double(e->value, e->line, s.name + "." + key);
    }

    static std::optional<int> integer(RawSection& s, const std::string& key)
    {
        const RawEntry* e = entry(s, key);
        if (e == nullptr) {
            return std::nullopt;
        }
        const double v = to_double(e->value, e->line, s.name + "." + key);
        if (v != std::floor(v) || std::abs(v) > 1e9) {
            throw ParseError(e->line, s.name + "." + key + ": expected an integer, got '" + e->value + "'");
        }
        return static_cast<int>(v);
    }

    static std::optional<std::string> text(RawSection& s, const std::string& key)
    {
        const RawEntry* e = entry(s, key);
        if (e == nullptr) {
            return std::nullopt;
        }
        return e->value;
    }

    /// Three values, or one value broadcast to all three.
    static std::optional<Vector3> vector3(RawSection& s, const std::string& key, bool allow_scalar = false)
    {
        const RawEntry* e = entry(s, key);
        if (e == nullptr) {
            return std::nullopt;
        }
        const auto toks = split_ws(e->value);
        const std::string full = s.name + "." + key;
        if (allow_scalar && toks.size() == 1) {
            return Vector3::Constant(to_double(toks[0], e->line, full));
        }
        if (toks.size() != 3) {
            throw ParseError(e->line, full + ": expected 3 values" + (allow_scalar ? std::string(" or 1") : "")
                                          + ", got " + std::to_string(toks.size()));
        }
        return Vector3(to_double(toks[0], e->line, full), to_double(toks[1], e->line, full),
                       to_double(toks[2], e->line, full));
    }

    static double require_number(RawSection& s, const std::string& key)
    {
        auto v = number(s, key);
        if (!v) {
            throw ParseError(s.line, "missing required key: " + s.name + "." + key);
        }
        return *v;
    }

    static void reject_unused(RawSection& s)
    {
        for (const auto& [key, e] : s.entries) {
            if (!e.used) {
                throw ParseError(e.line, "unknown key '" + key + "'"
                                             + (s.name.empty() ? std::string() : " in section [" + s.name + "]"));
            }
        }
    }

private:
    std::vector<RawSection> sections_;
    RawSection root_;
};

inline Reader tokenize(std::string_view text)
{
    std::vector<RawSection> sections;
    RawSection root;
    RawSection* current = &root;
    int line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const std::size_t nl = text.find('\n', pos);
        std::string_view raw = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
        ++line_no;
        if (const auto hash = raw.find('#'); hash != std::string_view::npos) {
            raw = raw.substr(0, hash);
        }
        const std::string line = trim(raw);
        if (line.empty()) {
            continue;
        }
        if (line.front() == '[') {
            if (line.back() != ']' || line.size() < 3) {
                throw ParseError(line_no, "malformed section header '" + line + "'");
            }
            const std::string name = trim(std::string_view(line).substr(1, line.size() - 2));
            for (const auto& s : sections) {
                if (s.name == name) {
                    throw ParseError(line_no, "duplicate section [" + name + "]");
                }
            }
            sections.push_back(RawSection{name, line_no, {}, {}, name.size() > 7 && name.ends_with(".phases")});
            current = &sections.back();
            continue;
        }
        if (current->table) {
            auto cols = split_ws(line);
            if (current->rows.empty() && cols != phase_columns() && current->entries.empty()) {
                std::string expected;
                for (const auto& c : phase_columns()) {
                    expected += (expected.empty() ? "" : " ") + c;
                }
                throw ParseError(line_no, "phase table must start with the header '" + expected + "'");
            }
            if (current->entries.empty()) {
                // header row consumed
                current->entries.emplace("#header", RawEntry{line, line_no, true});
                continue;
            }
            if (cols.size() != phase_columns().size()) {
                throw ParseError(line_no, "phase row needs " + std::to_string(phase_columns().size()) + " columns, got "
                                              + std::to_string(cols.size()));
            }
            current->rows.emplace_back(line_no, std::move(cols));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ParseError(line_no, "expected 'key = value', got '" + line + "'");
        }
        const std::string key = trim(std::string_view(line).substr(0, eq));
        const std::string value = trim(std::string_view(line).substr(eq + 1));
        if (key.empty() || value.empty()) {
            throw ParseError(line_no, "expected 'key = value', got '" + line + "'");
        }
        if (current->entries.count(key) != 0) {
            throw ParseError(line_no, "duplicate key '" + key + "'");
        }
        current->entries.emplace(key, RawEntry{value, line_no, false});
    }
    return Reader(std::move(sections), std::move(root));
}

inline void apply_override(Reader& reader, const std::string& assignment)
{
    const auto eq = assignment.find('=');
    const auto dot = assignment.rfind('.', eq);
    if (eq == std::string::npos || dot == std::string::npos || dot == 0) {
        throw ConfigError("override '" + assignment + "' is not of the form section.key=value");
    }
    const std::string section = trim(std::string_view(assignment).substr(0, dot));
    const std::string key = trim(std::string_view(assignment).substr(dot + 1, eq - dot - 1));
    const std::string value = trim(std::string_view(assignment).substr(eq + 1));
    RawSection* s = reader.find(section);
    if (s == nullptr) {
        reader.sections().push_back(RawSection{section, 0, {}, {}, false});
        s = &reader.sections().back();
    }
    s->entries[key] = RawEntry{value, 0, false};
}

}  // namespace detail

/// Parses and validates a scenario. Overrides are `section.key=value` strings
/// applied before conversion (so they are subject to the same checks).
inline ScenarioConfig parse_scenario(std::string_view text, const std::vector<std::string>& overrides = {})
{
    using detail::Reader;
    Reader reader = detail::tokenize(text);
    for (const auto& o : overrides) {
        detail::apply_override(reader, o);
    }

    ScenarioConfig cfg;
    auto& root = reader.root();
    if (const auto* v = Reader::entry(root, "format_version")) {
        if (v->value != "1") {
            throw ParseError(v->line, "unsupported format_version '" + v->value + "'");
        }
    } else if (reader.find("physical") != nullptr) {
        throw ConfigError("missing format_version");
    }
    if (auto name = Reader::text(root, "name")) {
        cfg.name = *name;
    }
    Reader::reject_unused(root);

    auto& phys = reader.require("physical");
    cfg.physical.mass = Reader::require_number(phys, "mass_kg");
    if (auto g = Reader::vector3(phys, "gravity_mps2")) {
        cfg.physical.gravity = *g;
    }
    if (auto h = Reader::number(phys, "com_height_nominal_m")) {
        cfg.physical.com_height_nominal = *h;
    }
    Reader::reject_unused(phys);

    if (auto* init = reader.find("initial")) {
        cfg.initial_com = Reader::vector3(*init, "com_position_m");
        if (auto v = Reader::vector3(*init, "linear_momentum_kgmps")) {
            cfg.initial_linear_momentum = *v;
        }
        if (auto v = Reader::vector3(*init, "angular_momentum_kgm2ps")) {
            cfg.initial_angular_momentum = *v;
        }
        Reader::reject_unused(*init);
    }

    if (auto* mpc = reader.find("mpc")) {
        MpcOptions& o = cfg.mpc;
        if (auto v = Reader::integer(*mpc, "horizon_knots")) o.horizon = *v;
        if (auto v = Reader::number(*mpc, "sampling_time_s")) o.sampling_time = *v;
        if (auto v = Reader::number(*mpc, "friction_coefficient")) o.friction_coefficient = *v;
        if (auto v = Reader::number(*mpc, "normal_force_min_n")) o.normal_force_min = *v;
        if (auto v = Reader::number(*mpc, "normal_force_max_n")) o.normal_force_max = *v;
        if (auto v = Reader::vector3(*mpc, "box_lower_m")) o.box.lower = *v;
        if (auto v = Reader::vector3(*mpc, "box_upper_m")) o.box.upper = *v;
        if (auto v = Reader::vector3(*mpc, "nominal_angular_momentum_kgm2ps")) o.nominal_angular_momentum = *v;
        if (auto v = Reader::number(*mpc, "com_height_offset_m")) o.com_reference.height = *v;
        if (auto v = Reader::text(*mpc, "com_knot_timing")) {
            if (*v == "phase_midpoint") {
                o.com_reference.timing = ComReferencePolicy::KnotTiming::phase_midpoint;
            } else if (*v == "phase_start") {
                o.com_reference.timing = ComReferencePolicy::KnotTiming::phase_start;
            } else {
                throw ParseError(mpc->entries["com_knot_timing"].line,
                                 "mpc.com_knot_timing must be phase_midpoint or phase_start");
            }
        }
        if (auto v = Reader::integer(*mpc, "max_iterations")) o.solver.max_iterations = *v;
        if (auto v = Reader::number(*mpc, "kkt_tolerance")) o.solver.kkt_tolerance = *v;
        if (auto v = Reader::number(*mpc, "constraint_tolerance")) o.solver.constraint_tolerance = *v;
        Reader::reject_unused(*mpc);
    }

    if (auto* w = reader.find("weights")) {
        Weights& o = cfg.mpc.weights;
        if (auto v = Reader::vector3(*w, "force_regularization", true)) o.force_regularization = *v;
        if (auto v = Reader::vector3(*w, "force_rate", true)) o.force_rate = *v;
        if (auto v = Reader::vector3(*w, "angular_momentum", true)) o.angular_momentum = *v;
        if (auto v = Reader::vector3(*w, "com_tracking", true)) o.com_tracking = *v;
        if (auto v = Reader::vector3(*w, "contact_regularization", true)) o.contact_regularization = *v;
        Reader::reject_unused(*w);
    }

    auto& sim = reader.require("simulation");
    cfg.duration = Reader::require_number(sim, "duration_s");
    cfg.plan_duration = cfg.duration + cfg.mpc.horizon * cfg.mpc.sampling_time;
    if (auto v = Reader::number(sim, "plan_duration_s")) cfg.plan_duration = *v;
    if (auto v = Reader::integer(sim, "plant_substeps")) cfg.substeps = *v;
    if (auto v = Reader::text(sim, "output_dir")) cfg.output_dir = *v;
    if (auto v = Reader::text(sim, "disturbance_prediction")) {
        if (*v != "event_window" && *v != "horizon") {
            throw ParseError(sim.entries["disturbance_prediction"].line,
                             "simulation.disturbance_prediction must be event_window or horizon");
        }
        cfg.hold_disturbance_over_horizon = *v == "horizon";
    }
    Reader::reject_unused(sim);

    for (detail::RawSection* s : reader.with_prefix("contact.")) {
        if (s->table) {
            continue;
        }
        NominalContact c;
        c.name = s->name.substr(8);
        const std::string shape = Reader::text(*s, "shape").value_or("point");
        if (shape == "point") {
            c.geometry = ContactGeometry::point();
        } else if (shape == "rectangle") {
            const double l = Reader::require_number(*s, "length_m");
            const double w = Reader::require_number(*s, "width_m");
            if (!(l > 0.0) || !(w > 0.0)) {
                throw ParseError(s->line, s->name + ": length_m and width_m must be positive");
            }
            c.geometry = ContactGeometry::rectangle(l, w);
        } else {
            throw ParseError(s->entries["shape"].line, s->name + ".shape must be point or rectangle");
        }
        Reader::reject_unused(*s);
        detail::RawSection* table = reader.find(s->name + ".phases");
        if (table == nullptr) {
            throw ParseError(s->line, "contact '" + c.name + "' has no [" + s->name + ".phases] table");
        }
        for (const auto& [line, cols] : table->rows) {
            std::array<double, 6> v{};
            for (std::size_t q = 0; q < 6; ++q) {
                v[q] = detail::to_double(cols[q], line, table->name + "." + detail::phase_columns()[q]);
            }
            ContactPhase ph;
            ph.t_start = v[0];
            ph.t_end = v[1];
            ph.position = Vector3(v[2], v[3], v[4]);
            ph.orientation = yaw_rotation(v[5]);
            c.phases.push_back(ph);
        }
        cfg.contacts.push_back(std::move(c));
    }
    for (detail::RawSection* s : reader.with_prefix("contact.")) {
        if (s->table && reader.find(s->name.substr(0, s->name.size() - 7)) == nullptr) {
            throw ParseError(s->line, "phase table [" + s->name + "] has no matching contact section");
        }
    }

    for (detail::RawSection* s : reader.with_prefix("disturbance.")) {
        DisturbanceEvent e;
        e.name = s->name.substr(12);
        e.start = Reader::require_number(*s, "start_s");
        e.duration = Reader::require_number(*s, "duration_s");
        const auto f = Reader::vector3(*s, "force_n");
        if (!f) {
            throw ParseError(s->line, "missing required key: " + s->name + ".force_n");
        }
        e.force = *f;
        e.estimated_force = Reader::vector3(*s, "estimated_force_n").value_or(e.force);
        if (const std::string app = Reader::text(*s, "application").value_or("com"); app != "com") {
            throw ParseError(s->entries["application"].line, s->name + ".application must be com");
        }
        Reader::reject_unused(*s);
        cfg.disturbances.push_back(std::move(e));
    }

    for (auto& s : reader.sections()) {
        const bool known = s.name == "physical" || s.name == "initial" || s.name == "mpc" || s.name == "weights"
                        || s.name == "simulation" || s.name.rfind("contact.", 0) == 0
                        || s.name.rfind("disturbance.", 0) == 0;
        if (!known) {
            throw ParseError(s.line, "unknown section [" + s.name + "]");
        }
    }

    cfg.validate();
    return cfg;
}

/// FNV-1a, used to fingerprint a scenario in run manifests.
inline std::uint64_t fnv1a(std::string_view bytes)
{
    std::uint64_t h = 14695981039346656037ULL;
    for (const char c : bytes) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace centroidal_mpc
