#pragma once

// File formats: pulse JSON, trajectory and sweep CSVs, design and report JSON.
// Numbers are written with 17 significant digits so files round-trip exactly.

#include <cstdio>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "selspin/analytic_solution.hpp"
#include "selspin/grape.hpp"
#include "selspin/landscape.hpp"
#include "selspin/pmp_extremal.hpp"
#include "selspin/singular_design.hpp"
#include "selspin/spin_core.hpp"
#include "selspin/verification.hpp"

namespace selspin {

using nlohmann::json;

/// Malformed input (as opposed to well-formed input that breaks a constraint).
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

namespace detail {

inline void csv_row(std::ostream& out, std::initializer_list<double> values) {
    bool first = true;
    for (double v : values) {
        if (!first) out << ',';
        out << num(v);
        first = false;
    }
    out << '\n';
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Pulses.

struct PulseFile {
    std::optional<double> omega;
    PiecewisePulse pulse;
};

inline json pulse_to_json(const PiecewisePulse& p, std::optional<double> omega) {
    json j;
    if (omega) j["omega"] = *omega;
    j["segments"] = json::array();
    for (const auto& s : p.segments()) j["segments"].push_back({{"dt", s.dt}, {"ux", s.ux}, {"uy", s.uy}});
    return j;
}

/// FormatError for bad JSON or missing fields; PulseValidationError (from the
/// pulse constructor) for segments that break the amplitude or duration rules.
inline PulseFile pulse_from_json(const json& j) {
    if (!j.is_object()) throw FormatError("pulse: expected a JSON object");
    if (!j.contains("segments") || !j["segments"].is_array()) throw FormatError("pulse: missing 'segments' array");
    PulseFile f;
    if (j.contains("omega")) {
        if (!j["omega"].is_number()) throw FormatError("pulse: 'omega' must be a number");
        f.omega = j["omega"].get<double>();
    }
    std::vector<Segment> segs;
    std::size_t i = 0;
    for (const auto& s : j["segments"]) {
        for (const char* key : {"dt", "ux", "uy"})
            if (!s.is_object() || !s.contains(key) || !s[key].is_number())
                throw FormatError("pulse: segment " + std::to_string(i) + " needs numeric '" + key + "'");
        segs.push_back({s["dt"].get<double>(), s["ux"].get<double>(), s["uy"].get<double>()});
        ++i;
    }
    f.pulse = PiecewisePulse(segs);
    return f;
}

inline PulseFile parse_pulse(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw FormatError(std::string("pulse: ") + e.what());
    }
    return pulse_from_json(j);
}

inline std::string read_text(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out << text;
    if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

// ---------------------------------------------------------------------------
// Trajectories.

inline void write_trajectory_csv(std::ostream& out, const std::vector<SpinPairState>& states) {
    out << "t,x1,y1,z1,x2,y2,z2\n";
    for (const auto& s : states)
        detail::csv_row(out, {s.time, s.m1.x, s.m1.y, s.m1.z, s.m2.x, s.m2.y, s.m2.z});
}

inline void write_extremal_csv(std::ostream& out, const ExtremalTrajectory& tr) {
    out << "t,lx,ly,mx,my,mz,r,alpha,ux,uy\n";
    for (std::size_t k = 0; k < tr.states.size(); ++k) {
        const auto& c = tr.states[k];
        detail::csv_row(out, {tr.times[k], c.lx, c.ly, c.mx, c.my, c.mz, c.r(), tr.alpha[k], tr.controls[k].ux,
                              tr.controls[k].uy});
    }
}

inline json invariant_report(const ExtremalTrajectory& tr) {
    return {{"s", tr.invariants.s},
            {"r0", tr.invariants.r0},
            {"E", tr.invariants.energy},
            {"max_drift", {{"r0", tr.drift.r0}, {"s", tr.drift.s}, {"norm", tr.drift.norm}, {"lz", tr.drift.lz}}},
            {"kepler_residual", kepler_residual(tr)},
            {"singular_hit", tr.singular_hit},
            {"t_singular", tr.singular_hit ? json(tr.t_singular) : json(nullptr)}};
}

struct AnalyticComparisonRow {
    double t, r_ode, r_analytic, alpha_ode, alpha_analytic;
};

inline void write_analytic_comparison_csv(std::ostream& out, const std::vector<AnalyticComparisonRow>& rows) {
    out << "t,r_ode,r_analytic,alpha_ode,alpha_analytic,err_r,err_alpha\n";
    for (const auto& r : rows)
        detail::csv_row(out, {r.t, r.r_ode, r.r_analytic, r.alpha_ode, r.alpha_analytic,
                              std::abs(r.r_ode - r.r_analytic), std::abs(r.alpha_ode - r.alpha_analytic)});
}

// ---------------------------------------------------------------------------
// Singular designs.

inline json design_to_json(const RegSingDesign& d, double j_final) {
    return {{"target", to_string(d.target)}, {"omega", d.omega},     {"delta_alpha", d.delta_alpha},
            {"T_r", d.t_regular},            {"T_s", d.t_singular}, {"t_f", d.t_final},
            {"J_final", j_final}};
}

inline void write_singular_sweep_csv(std::ostream& out, const std::vector<RegSingDesign>& designs) {
    out << "omega,T_s,t_f,inv_tf\n";
    for (const auto& d : designs) detail::csv_row(out, {d.omega, d.t_singular, d.t_final, 1.0 / d.t_final});
}

// ---------------------------------------------------------------------------
// Landscapes.

inline void write_grid_csv(std::ostream& out, const LandscapeGrid& g) {
    out << "phi1,phi2,r0,s,j_min,t_hit,converged\n";
    for (const auto& c : g.cells) {
        out << num(c.phi1) << ',' << num(c.phi2) << ',' << num(c.r0) << ',' << num(c.s) << ',' << num(c.j_min) << ','
            << num(c.t_hit) << ',' << (c.converged ? 1 : 0) << '\n';
    }
}

inline void write_offset_sweep_csv(std::ostream& out, const std::vector<SweepPoint>& pts) {
    out << "omega,t_f,inv_tf,regime,phi1_star,phi2_star,r0_star,s_star\n";
    for (const auto& p : pts) {
        out << num(p.omega) << ',' << num(p.t_f) << ',' << num(p.inv_tf) << ',' << (p.ok ? to_string(p.regime) : "failed")
            << ',' << num(p.phi1_star) << ',' << num(p.phi2_star) << ',' << num(p.r0_star) << ',' << num(p.s_star)
            << '\n';
    }
}

inline json optimum_to_json(const OptimumReport& r, double omega, TransferTarget target) {
    return {{"omega", omega},
            {"target", to_string(target)},
            {"regime", to_string(r.regime)},
            {"converged", r.converged},
            {"phi1_star", r.phi1_star},
            {"phi2_star", r.phi2_star},
            {"r0_star", r.r0_star},
            {"s_star", r.s_star},
            {"t_f_star", r.t_f_star},
            {"J_star", r.j_star},
            {"message", r.message}};
}

// ---------------------------------------------------------------------------
// GRAPE.

inline void write_grape_sweep_csv(std::ostream& out, const TimeSweep& sw) {
    out << "t_final,best_J,iterations,restart_index\n";
    for (const auto& p : sw.points)
        out << num(p.t_final) << ',' << num(p.best_j) << ',' << p.iterations << ',' << p.restart_index << '\n';
}

// ---------------------------------------------------------------------------
// Verification.

inline json report_to_json(const VerificationReport& rep) {
    json j;
    j["passed"] = rep.passed();
    j["suites"] = json::array();
    for (const auto& s : rep.suites) {
        json e;
        e["name"] = s.name;
        e["passed"] = s.passed();
        e["samples"] = s.samples;
        e["max_errors"] = json::object();
        for (const auto& [k, m] : s.errors) {
            json v = {{"value", m.value}, {"ok", m.ok()}};
            v["tolerance"] = m.tolerance > 0.0 ? json(m.tolerance) : json(nullptr);
            e["max_errors"][k] = v;
        }
        e["notes"] = s.notes;
        e["failures"] = s.failures;
        j["suites"].push_back(e);
    }
    return j;
}

}  // namespace selspin
