// selspin: time-optimal selective control of two spins from the command line.
//
// Exit codes: 0 success, 2 malformed input, 3 invalid parameters or pulse,
// 4 no convergence, 5 verification failure, 1 anything else (I/O).

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "selspin/analytic_solution.hpp"
#include "selspin/grape.hpp"
#include "selspin/io.hpp"
#include "selspin/landscape.hpp"
#include "selspin/singular_design.hpp"
#include "selspin/spin_core.hpp"
#include "selspin/verification.hpp"

namespace fs = std::filesystem;
using namespace selspin;

namespace {

enum Exit { Ok = 0, Other = 1, Parse = 2, Invalid = 3, NoConvergence = 4, VerifyFailed = 5 };

// Parameter failure found before any work starts.
struct InvalidConfig : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct Config {
    std::optional<double> omega;
    std::string target = "excitation";
    int grid = 256;
    std::optional<double> tmax;
    std::optional<double> step;
    int segments = 64;
    int restarts = 20;
    std::optional<std::uint64_t> seed;
    int workers = 0;
    std::string out = ".";
    std::vector<std::string> suites;
    // command-specific
    std::string pulse_path;
    double phi1 = 0.0, phi2 = 0.0;
    int samples = 10;
    std::optional<double> tfinal;
    std::optional<double> tmin;
    double tstep = 0.05;
    int iterations = 1500;
    std::vector<double> omegas;
    std::optional<double> omega_min, omega_max;
    int count = 0;
    int pulse_segments = 20000;
    bool inject_fault = false;
};

TransferTarget target_of(const Config& c) {
    try {
        return parse_target(c.target);
    } catch (const std::exception&) {
        throw InvalidConfig("--target must be 'excitation' or 'inversion'");
    }
}

double need_omega(const Config& c) {
    if (!c.omega) throw InvalidConfig("--omega is required");
    if (!(*c.omega > 0.0) || !std::isfinite(*c.omega)) throw InvalidConfig("--omega must be positive");
    return *c.omega;
}

void check_common(const Config& c) {
    if (c.omega && !(*c.omega >= 0.0)) throw InvalidConfig("--omega must be non-negative");
    if (c.grid < 32) throw InvalidConfig("--grid must be at least 32");
    if (c.tmax && !(*c.tmax > 0.0)) throw InvalidConfig("--tmax must be positive");
    if (c.step && !(*c.step > 0.0)) throw InvalidConfig("--step must be positive");
    if (c.segments < 8) throw InvalidConfig("--segments must be at least 8");
    if (c.restarts < 1) throw InvalidConfig("--restarts must be at least 1");
    if (c.workers < 0) throw InvalidConfig("--workers must be non-negative");
    (void)target_of(c);
}

fs::path out_dir(const Config& c) {
    fs::path p(c.out);
    fs::create_directories(p);
    return p;
}

template <class Writer>
void write_file(const fs::path& path, Writer&& w) {
    std::ostringstream ss;
    w(ss);
    write_text(path.string(), ss.str());
}

void write_json(const fs::path& path, const json& j) { write_text(path.string(), j.dump(2) + "\n"); }

// ---------------------------------------------------------------------------

int cmd_simulate(const Config& c) {
    if (c.pulse_path.empty()) throw InvalidConfig("--pulse is required");
    if (c.samples < 0) throw InvalidConfig("--samples must be non-negative");
    const auto file = parse_pulse(read_text(c.pulse_path));
    double omega;
    if (c.omega) omega = need_omega(c);
    else if (file.omega) omega = *file.omega;
    else throw InvalidConfig("no offset: pass --omega or put \"omega\" in the pulse file");
    if (!(omega > 0.0)) throw InvalidConfig("offset must be positive");
    const auto states = propagate_pulse({}, omega, file.pulse, {c.samples});
    const auto& fin = states.back();
    const auto dir = out_dir(c);
    write_file(dir / "trajectory.csv", [&](std::ostream& o) { write_trajectory_csv(o, states); });
    const json summary = {
        {"omega", omega},
        {"duration", file.pulse.total_duration()},
        {"segments", file.pulse.size()},
        {"J_excitation", figure_of_merit(fin, TransferTarget::SelectiveExcitation)},
        {"J_inversion", figure_of_merit(fin, TransferTarget::SelectiveInversion)},
        {"final", {{"x1", fin.m1.x}, {"y1", fin.m1.y}, {"z1", fin.m1.z}, {"x2", fin.m2.x}, {"y2", fin.m2.y}, {"z2", fin.m2.z}}}};
    write_json(dir / "summary.json", summary);
    std::printf("duration %.10g  J_excitation %.3e  J_inversion %.3e\n", file.pulse.total_duration(),
                summary["J_excitation"].get<double>(), summary["J_inversion"].get<double>());
    return Ok;
}

int cmd_extremal(const Config& c) {
    const double omega = need_omega(c);
    const double t_end = c.tmax.value_or(2.0 * std::numbers::pi);
    const double h = c.step.value_or(1e-3);
    const ExtremalParams p{omega, c.phi1, c.phi2};
    const auto init = initial_costates(p);
    if (init.degenerate) throw InvalidConfig("degenerate angle pair: " + init.reason);
    const auto tr = integrate_extremal(p, t_end, h);
    const auto dir = out_dir(c);
    write_file(dir / "extremal.csv", [&](std::ostream& o) { write_extremal_csv(o, tr); });
    write_json(dir / "invariants.json", invariant_report(tr));

    const auto rec = reconstruct_bloch(tr);
    write_file(dir / "bloch.csv", [&](std::ostream& o) { write_trajectory_csv(o, rec.states); });

    // Closed form next to the integration, where one applies.
    std::vector<AnalyticComparisonRow> rows;
    std::string analytic = "none";
    try {
        const auto d = initial_direction(init.state, omega);
        if (is_zero_s(tr.invariants.s)) {
            for (std::size_t k = 0; k < tr.times.size(); ++k) {
                const auto x = s0_solution(omega, tr.invariants.r0, tr.times[k], d);
                rows.push_back({tr.times[k], tr.states[k].r(), x.r, tr.alpha[k] - tr.alpha[0], x.alpha});
            }
            analytic = "harmonic (s = 0)";
        } else {
            const auto ep = elliptic_params(tr.invariants, omega, d);
            for (std::size_t k = 0; k < tr.times.size(); ++k) {
                const auto x = elliptic_solution_at(ep, tr.times[k]);
                rows.push_back({tr.times[k], tr.states[k].r(), x.r, tr.alpha[k] - tr.alpha[0], x.alpha});
            }
            analytic = "elliptic (" + to_string(ep.branch) + ")";
        }
    } catch (const std::exception& e) {
        analytic = std::string("not applicable: ") + e.what();
        rows.clear();
    }
    if (!rows.empty()) write_file(dir / "analytic.csv", [&](std::ostream& o) { write_analytic_comparison_csv(o, rows); });
    std::printf("s %.10g  r0 %.10g  E %.10g  drift(r0, s, norm) %.2e %.2e %.2e\n", tr.invariants.s, tr.invariants.r0,
                tr.invariants.energy, tr.drift.r0, tr.drift.s, tr.drift.norm);
    if (tr.singular_hit) std::printf("singular set reached at t = %.10g\n", tr.t_singular);
    std::printf("closed form: %s\n", analytic.c_str());
    if (rec.fallback_used) std::printf("reconstruction: %s\n", rec.note.c_str());
    return Ok;
}

ScanOptions scan_options(const Config& c) {
    ScanOptions o;
    o.grid_n = c.grid;
    o.t_max = c.tmax.value_or(0.0);
    if (c.step) o.dt = *c.step;
    o.workers = c.workers;
    return o;
}

void print_report(const OptimumReport& r) {
    std::printf("regime %s  converged %s\n", to_string(r.regime).c_str(), r.converged ? "yes" : "no");
    std::printf("phi1* = %.6f pi  phi2* = %.6f pi  r0* = %.8f  s* = %.8f\n", r.phi1_star / std::numbers::pi,
                r.phi2_star / std::numbers::pi, r.r0_star, r.s_star);
    std::printf("t_f* = %.10g (%.6f pi)  J* = %.3e\n", r.t_f_star, r.t_f_star / std::numbers::pi, r.j_star);
    if (!r.message.empty()) std::printf("%s\n", r.message.c_str());
}

OptimumReport singular_report(TransferTarget target, double omega) {
    const auto d = solve_design(target, omega);
    const auto e = singular_entry_angles(omega);
    OptimumReport r;
    r.phi1_star = e.phi1;
    r.phi2_star = e.phi2;
    r.r0_star = omega * std::numbers::sqrt2;
    r.s_star = 0.0;
    r.t_f_star = d.t_final;
    r.j_star = figure_of_merit(propagate_final({}, omega, build_pulse(d)), target);
    r.regime = Regime::Singular;
    r.converged = true;
    r.message = "at or below the singular threshold " + num(singular_threshold(target)) +
                ": regular-singular-regular design";
    return r;
}

int cmd_landscape(const Config& c) {
    const double omega = need_omega(c);
    const auto target = target_of(c);
    const auto g = scan(omega, target, scan_options(c));
    const auto dir = out_dir(c);
    write_file(dir / "grid.csv", [&](std::ostream& o) { write_grid_csv(o, g); });
    const bool any = std::any_of(g.cells.begin(), g.cells.end(), [](const auto& x) { return x.converged; });
    OptimumReport r;
    if (omega <= singular_threshold(target)) {
        r = singular_report(target, omega);
    } else {
        if (!any) {
            std::fprintf(stderr, "no cell reached J < %g within t_max = %g\n", g.j_threshold, g.t_max);
            return NoConvergence;
        }
        r = refine_global(g, 8, {}, c.workers);
    }
    write_json(dir / "optimum.json", optimum_to_json(r, omega, target));
    std::printf("grid %d x %d, t_max %.6g, %zu converged cells\n", g.n, g.n, g.t_max,
                static_cast<std::size_t>(std::count_if(g.cells.begin(), g.cells.end(), [](const auto& x) { return x.converged; })));
    print_report(r);
    return r.converged ? Ok : NoConvergence;
}

int cmd_solve(const Config& c) {
    const double omega = need_omega(c);
    const auto target = target_of(c);
    const auto dir = out_dir(c);
    if (omega <= singular_threshold(target)) {
        const auto d = solve_design(target, omega);
        const auto pulse = build_pulse(d);
        const double j = figure_of_merit(propagate_final({}, omega, pulse), target);
        write_json(dir / "design.json", design_to_json(d, j));
        write_json(dir / "pulse.json", pulse_to_json(pulse, omega));
        std::printf("singular design: delta_alpha = %.6f pi  T_r = %.10g  T_s = %.10g  t_f = %.10g\n",
                    d.delta_alpha / std::numbers::pi, d.t_regular, d.t_singular, d.t_final);
        std::printf("re-simulated J = %.3e\n", j);
        return Ok;
    }
    SweepOptions so;
    so.scan = scan_options(c);
    so.scan.grid_n = std::min(c.grid, 64);
    const auto r = regular_optimum(omega, target, so);
    if (!r.converged) {
        print_report(r);
        std::fprintf(stderr, "refinement did not converge\n");
        return NoConvergence;
    }
    const auto pulse = optimum_pulse(omega, r.phi1_star, r.phi2_star, r.t_f_star, c.pulse_segments);
    const double j = figure_of_merit(propagate_final({}, omega, pulse), target);
    json design = optimum_to_json(r, omega, target);
    design["J_final"] = j;
    design["pulse_segments"] = c.pulse_segments;
    write_json(dir / "design.json", design);
    write_json(dir / "pulse.json", pulse_to_json(pulse, omega));
    print_report(r);
    std::printf("re-simulated J (%d piecewise-constant segments) = %.3e\n", c.pulse_segments, j);
    return Ok;
}

int cmd_grape(const Config& c) {
    GrapeProblem p;
    p.omega = need_omega(c);
    p.target = target_of(c);
    p.n_segments = c.segments;
    p.restarts = c.restarts;
    p.seed = c.seed.value_or(1);
    p.workers = c.workers;
    p.max_iterations = c.iterations;
    std::vector<double> times;
    if (c.tfinal) {
        if (!(*c.tfinal > 0.0)) throw InvalidConfig("--tfinal must be positive");
        times.push_back(*c.tfinal);
    } else {
        if (!c.tmin || !c.tmax) throw InvalidConfig("pass --tfinal, or --tmin and --tmax");
        if (!(*c.tmin > 0.0) || *c.tmax < *c.tmin || !(c.tstep > 0.0)) throw InvalidConfig("bad time grid");
        const int n = static_cast<int>(std::floor((*c.tmax - *c.tmin) / c.tstep + 1e-9));
        for (int k = 0; k <= n; ++k) times.push_back(*c.tmin + k * c.tstep);
    }
    p.t_final = times.front();
    validate(p);
    const auto sw = time_sweep(p, times);
    const auto dir = out_dir(c);
    write_file(dir / "grape_sweep.csv", [&](std::ostream& o) { write_grape_sweep_csv(o, sw); });
    // Best pulse: the shortest time that reached the threshold, else the lowest J.
    const TimeSweepPoint* best = nullptr;
    for (const auto& pt : sw.points) {
        if (!pt.error.empty()) continue;
        if (pt.best_j < p.j_threshold) {
            best = &pt;
            break;
        }
        if (!best || pt.best_j < best->best_j) best = &pt;
    }
    for (const auto& pt : sw.points) {
        std::printf("t_final %.6g  best J %.3e  iterations %d  restart %d%s%s\n", pt.t_final, pt.best_j,
                    pt.iterations, pt.restart_index, pt.padded ? "  (padded)" : "",
                    pt.error.empty() ? "" : ("  error: " + pt.error).c_str());
    }
    if (best) write_json(dir / "best_pulse.json", pulse_to_json(best->result.pulse, p.omega));
    std::optional<double> reference;
    if (p.omega <= singular_threshold(p.target)) reference = solve_design(p.target, p.omega).t_final;
    if (sw.cliff) {
        std::printf("cliff (first t with J < %g): %.6g\n", p.j_threshold, *sw.cliff);
        if (reference)
            std::printf("analytic minimum time %.10g, relative deviation %+.2f%%\n", *reference,
                        100.0 * (*sw.cliff - *reference) / *reference);
        else
            std::printf("no closed-form reference above the singular threshold; see 'selspin solve'\n");
        return Ok;
    }
    std::fprintf(stderr, "no time reached J < %g\n", p.j_threshold);
    return NoConvergence;
}

int cmd_verify(const Config& c) {
    for (const auto& s : c.suites)
        if (std::find(suite_names().begin(), suite_names().end(), s) == suite_names().end())
            throw InvalidConfig("unknown suite '" + s + "'");
    VerifyOptions o;
    if (c.seed) o.seed = *c.seed;
    o.inject_fault = c.inject_fault;
    const auto rep = verify(c.suites, o);
    const auto dir = out_dir(c);
    write_json(dir / "verification_report.json", report_to_json(rep));
    for (const auto& s : rep.suites) {
        std::printf("%-12s %s  (%d samples)\n", s.name.c_str(), s.passed() ? "pass" : "FAIL", s.samples);
        for (const auto& [k, m] : s.errors)
            if (m.tolerance > 0.0)
                std::printf("    %-36s %.3e  < %.0e%s\n", k.c_str(), m.value, m.tolerance, m.ok() ? "" : "  violated");
            else
                std::printf("    %-36s %.3e  (info)\n", k.c_str(), m.value);
        for (const auto& f : s.failures) std::printf("    failure: %s\n", f.c_str());
    }
    return rep.passed() ? Ok : VerifyFailed;
}

std::vector<double> omega_grid(const Config& c, double default_max) {
    if (!c.omegas.empty()) return c.omegas;
    const double lo = c.omega_min.value_or(0.05), hi = c.omega_max.value_or(default_max);
    const int n = c.count > 0 ? c.count : 20;
    if (!(lo > 0.0) || hi < lo) throw InvalidConfig("bad offset range");
    std::vector<double> w;
    for (int k = 0; k < n; ++k) w.push_back(n == 1 ? lo : lo + (hi - lo) * k / (n - 1));
    return w;
}

int cmd_sweep(const Config& c) {
    const auto target = target_of(c);
    const auto omegas = omega_grid(c, 2.0);
    for (std::size_t k = 0; k < omegas.size(); ++k)
        if (!(omegas[k] > 0.0) || (k > 0 && omegas[k] < omegas[k - 1]))
            throw InvalidConfig("offsets must be positive and sorted");
    SweepOptions so;
    so.scan = scan_options(c);
    const auto pts = sweep_offsets(target, omegas, so);
    const auto dir = out_dir(c);
    write_file(dir / "landscape_sweep.csv", [&](std::ostream& o) { write_offset_sweep_csv(o, pts); });
    int ok = 0;
    for (const auto& p : pts) {
        std::printf("omega %.6g  t_f %.10g  %s%s\n", p.omega, p.t_f, p.ok ? to_string(p.regime).c_str() : "failed",
                    p.error.empty() ? "" : ("  " + p.error).c_str());
        ok += p.ok;
    }
    return ok > 0 ? Ok : NoConvergence;
}

int cmd_singular_sweep(const Config& c) {
    const auto target = target_of(c);
    const auto omegas = omega_grid(c, singular_threshold(target));
    std::vector<RegSingDesign> designs;
    for (double w : omegas) {
        if (!(w > 0.0) || w > singular_threshold(target))
            throw InvalidConfig("offset " + num(w) + " outside (0, " + num(singular_threshold(target)) + "]");
        designs.push_back(solve_design(target, w));
    }
    const auto dir = out_dir(c);
    write_file(dir / "singular_sweep.csv", [&](std::ostream& o) { write_singular_sweep_csv(o, designs); });
    for (const auto& d : designs) std::printf("omega %.6g  T_s %.10g  t_f %.10g\n", d.omega, d.t_singular, d.t_final);
    return Ok;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Time-optimal selective control of two spin-1/2 particles with opposite offsets"};
    app.require_subcommand(1);
    Config c;

    auto common = [&](CLI::App* s) {
        s->add_option("--omega", c.omega, "offset omega (spins at -omega and +omega)");
        s->add_option("--target", c.target, "excitation | inversion");
        s->add_option("--out", c.out, "output directory");
        s->add_option("--workers", c.workers, "worker threads (default: SELSPIN_WORKERS or all cores)");
    };

    auto* sim = app.add_subcommand("simulate", "propagate a pulse file exactly");
    common(sim);
    sim->add_option("--pulse", c.pulse_path, "pulse JSON")->required();
    sim->add_option("--samples", c.samples, "extra samples per segment in the trajectory");

    auto* ext = app.add_subcommand("extremal", "integrate one extremal and compare with the closed form");
    common(ext);
    ext->add_option("--phi1", c.phi1, "first initial angle")->required();
    ext->add_option("--phi2", c.phi2, "second initial angle")->required();
    ext->add_option("--tmax", c.tmax, "duration");
    ext->add_option("--step", c.step, "RK4 step");

    auto* land = app.add_subcommand("landscape", "scan the (phi1, phi2) plane and refine the optimum");
    common(land);
    land->add_option("--grid", c.grid, "cells per angle");
    land->add_option("--tmax", c.tmax, "horizon per cell (default depends on omega)");
    land->add_option("--step", c.step, "RK4 step");

    auto* solve = app.add_subcommand("solve", "minimum-time pulse for one offset");
    common(solve);
    solve->add_option("--grid", c.grid, "landscape cells per angle above the threshold (capped at 64)");
    solve->add_option("--tmax", c.tmax, "landscape horizon");
    solve->add_option("--step", c.step, "RK4 step");
    solve->add_option("--pulse-segments", c.pulse_segments, "segments of the emitted regular pulse");

    auto* grape = app.add_subcommand("grape", "piecewise-constant gradient optimization over final times");
    common(grape);
    grape->add_option("--tfinal", c.tfinal, "single final time");
    grape->add_option("--tmin", c.tmin, "first final time of the sweep");
    grape->add_option("--tmax", c.tmax, "last final time of the sweep");
    grape->add_option("--tstep", c.tstep, "sweep spacing");
    grape->add_option("--segments", c.segments, "segments per pulse");
    grape->add_option("--restarts", c.restarts, "initializations per final time");
    grape->add_option("--iterations", c.iterations, "iteration budget per restart");
    grape->add_option("--seed", c.seed, "random seed");

    auto* ver = app.add_subcommand("verify", "run the self-check suites");
    ver->add_option("--suite", c.suites, "suite name (repeatable): conserved analytic table2 reconstruct final_state elliptic singular");
    ver->add_option("--out", c.out, "output directory");
    ver->add_option("--seed", c.seed, "random seed for sampled suites");
    ver->add_flag("--inject-fault", c.inject_fault, "perturb every suite so that it fails");

    auto* sweep = app.add_subcommand("sweep", "minimum time against offset (singular or regular regime)");
    common(sweep);
    sweep->add_option("--omegas", c.omegas, "explicit offsets")->delimiter(',');
    sweep->add_option("--omega-min", c.omega_min, "first offset");
    sweep->add_option("--omega-max", c.omega_max, "last offset");
    sweep->add_option("--count", c.count, "number of offsets");
    sweep->add_option("--grid", c.grid, "landscape cells per angle");
    sweep->add_option("--tmax", c.tmax, "landscape horizon");
    sweep->add_option("--step", c.step, "RK4 step");

    auto* ssweep = app.add_subcommand("singular-sweep", "singular design over offsets below the threshold");
    ssweep->add_option("--target", c.target, "excitation | inversion");
    ssweep->add_option("--omegas", c.omegas, "explicit offsets")->delimiter(',');
    ssweep->add_option("--omega-min", c.omega_min, "first offset");
    ssweep->add_option("--omega-max", c.omega_max, "last offset (default: threshold)");
    ssweep->add_option("--count", c.count, "number of offsets");
    ssweep->add_option("--out", c.out, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? Ok : Parse;
    }

    try {
        check_common(c);
        if (*sim) return cmd_simulate(c);
        if (*ext) return cmd_extremal(c);
        if (*land) return cmd_landscape(c);
        if (*solve) return cmd_solve(c);
        if (*grape) return cmd_grape(c);
        if (*ver) return cmd_verify(c);
        if (*sweep) return cmd_sweep(c);
        if (*ssweep) return cmd_singular_sweep(c);
    } catch (const FormatError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return Parse;
    } catch (const PulseValidationError& e) {
        std::fprintf(stderr, "invalid pulse: %s\n", e.what());
        return Invalid;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "invalid parameters: %s\n", e.what());
        return Invalid;
    } catch (const std::domain_error& e) {
        std::fprintf(stderr, "invalid parameters: %s\n", e.what());
        return Invalid;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return Other;
    }
    return Other;
}
