#pragma once

// Self-check suites. Each suite compares an implementation against an
// independent route (ODE integration, exact propagation, a third-party
// special-function library) and records the worst deviation next to the
// tolerance it must meet.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/math/special_functions/ellint_1.hpp>
#include <boost/math/special_functions/ellint_3.hpp>

#include "selspin/analytic_solution.hpp"
#include "selspin/pmp_extremal.hpp"
#include "selspin/singular_design.hpp"
#include "selspin/special_functions.hpp"
#include "selspin/spin_core.hpp"

namespace selspin {

struct Measurement {
    double value = 0.0;
    double tolerance = 0.0;  // value must stay below; 0 means informational
    [[nodiscard]] bool ok() const { return tolerance <= 0.0 || value < tolerance; }
};

struct SuiteResult {
    std::string name;
    int samples = 0;
    std::map<std::string, Measurement> errors;
    std::vector<std::string> notes;
    std::vector<std::string> failures;  // checks that are not a max error

    [[nodiscard]] bool passed() const {
        if (!failures.empty() || samples == 0) return false;
        return std::all_of(errors.begin(), errors.end(), [](const auto& e) { return e.second.ok(); });
    }
    void record(const std::string& key, double value, double tolerance) {
        auto& m = errors[key];
        m.value = std::max(m.value, value);
        m.tolerance = tolerance;
    }
};

struct VerificationReport {
    std::vector<SuiteResult> suites;
    [[nodiscard]] bool passed() const {
        return !suites.empty() && std::all_of(suites.begin(), suites.end(), [](const auto& s) { return s.passed(); });
    }
};

struct VerifyOptions {
    std::uint64_t seed = 20100101;
    int conserved_count = 200;
    double conserved_step = 1e-4;
    int analytic_count = 50;
    // Testing aid: perturbs one compared quantity per suite so that every
    // suite must fail. Used to prove the report is not vacuous.
    bool inject_fault = false;
};

inline const std::vector<std::string>& suite_names() {
    static const std::vector<std::string> names{"conserved", "analytic", "table2", "reconstruct",
                                                "final_state", "elliptic", "singular"};
    return names;
}

namespace detail {

struct RandomExtremal {
    ExtremalParams p;
    CostateState c0;
    InvariantSet inv;
};

// Random regular extremal with s bounded away from zero and a non-degenerate well.
inline std::vector<RandomExtremal> random_elliptic_cases(std::mt19937_64& rng, int count) {
    std::uniform_real_distribution<double> uw(0.2, 3.0), ua(0.0, std::numbers::pi);
    std::vector<RandomExtremal> out;
    while (static_cast<int>(out.size()) < count) {
        ExtremalParams p{uw(rng), ua(rng), ua(rng)};
        const auto init = initial_costates(p);
        if (init.degenerate) continue;
        const auto inv = invariants_of_state(init.state, p.omega);
        if (std::abs(inv.s) < 1e-3) continue;
        const auto [ra, rb] = potential(inv, p.omega).turning_points();
        if (rb - ra < 1e-6) continue;
        out.push_back({p, init.state, inv});
    }
    return out;
}

}  // namespace detail

/// Reference integrator for s = 0. Between passages of l through the origin
/// the field is the constant +-(cos a, sin a); each sign change of l along
/// that direction is bisected before the field flips, so the integration is
/// smooth on every piece.
struct S0Reference {
    std::vector<double> times, r, alpha;
    int flips = 0;
};

inline S0Reference s0_reference(const CostateState& start, double omega, double t_end, double h) {
    const double a = std::atan2(start.ly, start.lx);
    const double ca = std::cos(a), sa = std::sin(a);
    double sigma = 1.0;
    auto proj = [&](const CostateState& c) { return c.lx * ca + c.ly * sa; };
    auto step = [&](const CostateState& c, double dt) {
        auto f = [&](const CostateState& x) { return costate_rhs(x, omega, sigma * ca, sigma * sa); };
        const auto k1 = f(c);
        const auto k2 = f(c + (0.5 * dt) * k1);
        const auto k3 = f(c + (0.5 * dt) * k2);
        const auto k4 = f(c + dt * k3);
        return c + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    };
    S0Reference o;
    CostateState c = start;
    double t = 0.0;
    o.times.push_back(0.0);
    o.r.push_back(c.r());
    o.alpha.push_back(0.0);
    const auto n = static_cast<std::size_t>(std::llround(t_end / h));
    for (std::size_t k = 0; k < n; ++k) {
        const double t_next = static_cast<double>(k + 1) * h;
        CostateState next = step(c, t_next - t);
        if (proj(next) * sigma < 0.0) {
            double lo = 0.0, hi = t_next - t;
            for (int it = 0; it < 200 && hi - lo > 1e-16; ++it) {
                const double mid = 0.5 * (lo + hi);
                if (proj(step(c, mid)) * sigma > 0.0) lo = mid; else hi = mid;
            }
            c = step(c, hi);
            t += hi;
            sigma = -sigma;
            ++o.flips;
            next = step(c, t_next - t);
        }
        c = next;
        t = t_next;
        o.times.push_back(t);
        o.r.push_back(c.r());
        o.alpha.push_back(o.flips * std::numbers::pi);
    }
    return o;
}

// ---------------------------------------------------------------------------

inline SuiteResult verify_conserved(const VerifyOptions& opt) {
    SuiteResult res{"conserved"};
    std::mt19937_64 rng(opt.seed);
    std::uniform_real_distribution<double> uw(0.2, 3.0), ua(0.0, std::numbers::pi);
    int skipped = 0;
    while (res.samples < opt.conserved_count) {
        const ExtremalParams p{uw(rng), ua(rng), ua(rng)};
        if (initial_costates(p).degenerate) { ++skipped; continue; }
        const auto tr = integrate_extremal(p, 4.0 * std::numbers::pi, opt.conserved_step);
        if (tr.singular_hit) { ++skipped; continue; }
        ++res.samples;
        res.record("r_minus_omega_mz", tr.drift.r0, 1e-8);
        res.record("l_dot_m", tr.drift.s, 1e-8);
        res.record("r2_plus_m2", tr.drift.norm, 1e-8);
        res.record("kepler", kepler_residual(tr), 1e-5);
    }
    if (opt.inject_fault) res.record("r_minus_omega_mz", 1.0, 1e-8);
    res.notes.push_back(std::to_string(res.samples) + " extremals over [0, 4 pi], step " +
                        std::to_string(opt.conserved_step) + "; " + std::to_string(skipped) +
                        " draws skipped (degenerate angles or singular hit)");
    return res;
}

inline SuiteResult verify_analytic(const VerifyOptions& opt) {
    SuiteResult res{"analytic"};
    std::mt19937_64 rng(opt.seed + 1);
    int real = 0, complex = 0;
    double printed_m_lo = std::numeric_limits<double>::infinity(), printed_m_hi = -printed_m_lo;
    for (const auto& cs : detail::random_elliptic_cases(rng, opt.analytic_count)) {
        const auto ep = elliptic_params(cs.p);
        const bool is_real = ep.branch == EllipticBranch::RealGammaPair;
        (is_real ? real : complex)++;
        if (!is_real) {
            printed_m_lo = std::min(printed_m_lo, ep.lambda1 / ep.lambda2);
            printed_m_hi = std::max(printed_m_hi, ep.lambda1 / ep.lambda2);
        }
        const auto tr = integrate_extremal(cs.p, 2.0 * ep.half_period, 1e-4);
        if (tr.singular_hit) {
            res.failures.push_back("extremal hit the singular set during comparison");
            continue;
        }
        ++res.samples;
        double er = 0.0, ea = 0.0;
        for (std::size_t k = 0; k < tr.times.size(); k += 20) {
            const auto x = elliptic_solution_at(ep, tr.times[k]);
            er = std::max(er, std::abs(x.r - tr.states[k].r()));
            ea = std::max(ea, std::abs(x.alpha - (tr.alpha[k] - tr.alpha[0])));
        }
        if (opt.inject_fault) er += 1e-3;
        res.record(is_real ? "r_real_branch" : "r_complex_branch", er, 1e-6);
        res.record(is_real ? "alpha_real_branch" : "alpha_complex_branch", ea, 1e-6);
    }
    res.notes.push_back(std::to_string(real) + " real-gamma and " + std::to_string(complex) +
                        " complex-gamma extremals, one radial period each, ODE step 1e-4");
    res.notes.push_back("correction: every coefficient family carries an overall sign that the table leaves as +-; "
                        "it is fixed here by requiring time and phase to increase across the radial bracket");
    if (complex > 0)
        res.notes.push_back("correction: complex-gamma branch uses modulus lambda1/(lambda1 - lambda2) in place of the "
                            "printed lambda1/lambda2 (printed value ranged over [" + std::to_string(printed_m_lo) +
                            ", " + std::to_string(printed_m_hi) + "], outside [0, 1]) and characteristic n/(n - 1) "
                            "in place of n in the phase integral, with amplitude arccos z");
    res.notes.push_back("correction: the unlabelled characteristic in the second time coefficient is n_a");
    res.notes.push_back("correction: the bracket ends are mapped to z = -1 and z = +1 exactly instead of through "
                        "the rounded Moebius map");
    return res;
}

inline SuiteResult verify_table2(const VerifyOptions& opt) {
    SuiteResult res{"table2"};
    int jumps = 0;
    for (double w : {0.3, 0.5, 1.2})
        for (double r0 : {0.5, 0.9, 1.3})
            for (bool swap : {false, true}) {
                const double dm = std::acos(1.0 - r0 * r0);
                double phi2 = 0.5 * (std::numbers::pi + dm), phi1 = std::numbers::pi - phi2;
                if (swap) std::swap(phi1, phi2);
                const auto init = initial_costates({w, phi1, phi2});
                if (init.degenerate) continue;
                const auto inv = invariants_of_state(init.state, w);
                if (!is_zero_s(inv.s)) {
                    res.failures.push_back("constructed angles do not give s = 0");
                    continue;
                }
                const auto dir = initial_direction(init.state, w);
                const auto o = s0_reference(init.state, w, 12.0, 1e-4);
                double er = 0.0, ea = 0.0;
                for (std::size_t k = 0; k < o.times.size(); k += 10) {
                    const auto x = s0_solution(w, inv.r0, o.times[k], dir);
                    er = std::max(er, std::abs(x.r - o.r[k]));
                    ea = std::max(ea, std::abs(x.alpha - o.alpha[k]));
                }
                if (opt.inject_fault) ea += 1e-3;
                ++res.samples;
                const bool positive = inv.energy > 0.0;
                res.record(positive ? "r_E_positive" : "r_E_negative", er, 1e-7);
                res.record(positive ? "alpha_E_positive" : "alpha_E_negative", ea, 1e-7);
                if (positive) {
                    if (o.flips == 0) res.failures.push_back("E > 0 case without a passage through r = 0");
                    jumps += o.flips;
                    // Each closed-form jump is exactly pi.
                    const auto z = s0_setup(w, inv.r0, dir);
                    for (double tn : s0_crossing_times(z, 12.0)) {
                        const double before = s0_solution(w, inv.r0, std::max(0.0, tn - 1e-9), dir).alpha;
                        const double after = s0_solution(w, inv.r0, tn + 1e-9, dir).alpha;
                        res.record("jump_minus_pi", std::abs(after - before - std::numbers::pi), 1e-12);
                    }
                } else if (o.flips != 0) {
                    res.failures.push_back("E < 0 case crossed r = 0");
                }
            }
    res.notes.push_back(std::to_string(jumps) + " phase jumps of pi observed in the E > 0 cases");
    res.notes.push_back("the reference integrator flips the field at bisected passages of l through the origin");
    return res;
}

inline SuiteResult verify_reconstruct(const VerifyOptions& opt) {
    SuiteResult res{"reconstruct"};
    std::mt19937_64 rng(opt.seed + 2);
    for (const auto& cs : detail::random_elliptic_cases(rng, 10)) {
        const auto tr = integrate_extremal(cs.p, 4.0, 1e-4);
        if (tr.singular_hit) continue;
        const auto rec = reconstruct_bloch(tr);
        ExtremalSpinState x{cs.c0, SpinPairState{}};
        double worst = 0.0;
        for (std::size_t k = 0; k < tr.times.size(); ++k) {
            if (k > 0) x = rk4_joint_step(x, cs.p.omega, tr.times[k] - tr.times[k - 1]);
            const auto& a = rec.states[k];
            worst = std::max({worst, (a.m1 - x.spins.m1).norm(), (a.m2 - x.spins.m2).norm()});
        }
        if (opt.inject_fault) worst += 1e-3;
        ++res.samples;
        res.record(rec.fallback_used ? "bloch_with_fallback" : "bloch_chart", worst, 1e-6);
    }
    // Resonant extremal: spin 2's chart collapses and the fallback must take over.
    const double w = std::sqrt(15.0) / 2.0;
    const auto tr = integrate_extremal({w, 0.0, std::numbers::pi / 2}, std::numbers::pi / 2, 1e-4);
    const auto rec = reconstruct_bloch(tr);
    ++res.samples;
    if (!rec.fallback_used) res.failures.push_back("chart breakdown at the resonant extremal went unnoticed");
    else res.notes.push_back("resonant extremal: " + rec.note);
    const auto& end = rec.states.back();
    res.record("resonant_target", std::max(std::abs(end.m1.z), std::abs(end.m2.z - 1.0)), 1e-6);
    return res;
}

inline SuiteResult verify_final_state(const VerifyOptions& opt) {
    SuiteResult res{"final_state"};
    double printed = 0.0, printed_z = 0.0;
    for (auto target : {TransferTarget::SelectiveExcitation, TransferTarget::SelectiveInversion}) {
        const double top = singular_threshold(target);
        const std::string tag = to_string(target);
        for (int i = 1; i <= 20; ++i) {
            const auto d = solve_design(target, top * i / 20.0);
            const auto f = final_state_formulas(d);
            const auto p = propagate_final({}, d.omega, build_pulse(d));
            const double z1_target = target == TransferTarget::SelectiveExcitation ? 0.0 : -1.0;
            double dz = std::max(std::abs(f.m1.z - z1_target), std::abs(f.m2.z - 1.0));
            if (opt.inject_fault) dz += 1e-3;
            res.record(tag + "_formula_z_vs_target", dz, 1e-9);
            res.record(tag + "_formula_vs_propagator", std::max((f.m1 - p.m1).norm(), (f.m2 - p.m2).norm()), 1e-9);
            res.record(tag + "_propagated_J", figure_of_merit(p, target), 1e-9);
            const auto pr = printed_final_state(d);
            printed = std::max({printed, (pr.m1 - p.m1).norm(), (pr.m2 - p.m2).norm()});
            printed_z = std::max({printed_z, std::abs(pr.m1.z - p.m1.z), std::abs(pr.m2.z - p.m2.z)});
            ++res.samples;
        }
    }
    res.record("printed_vs_propagator", printed, 0.0);
    res.record("printed_z_vs_propagator", printed_z, 0.0);
    res.notes.push_back("printed final-state components disagree with the exact propagator (max vector error " +
                        std::to_string(printed) + "); the propagator is ground truth and the implemented formulas "
                        "use z1 = -cos(da - tau - gamma) and the half-angle transverse forms");
    return res;
}

inline SuiteResult verify_elliptic(const VerifyOptions& opt) {
    SuiteResult res{"elliptic"};
    for (int i = 0; i <= 20; ++i) {
        const double m = 0.95 * i / 20.0;
        const double k = std::sqrt(m);
        for (int j = 1; j <= 10; ++j) {
            const double phi = 1.5 * j / 10.0;
            double ef = std::abs(ellip_f(phi, m) - boost::math::ellint_1(k, phi));
            if (opt.inject_fault) ef += 1e-3;
            res.record("F_vs_boost", ef / std::max(1.0, std::abs(ellip_f(phi, m))), 1e-12);
            for (double n : {-3.0, -0.5, 0.3, 0.8}) {
                // Boost's third kind uses 1 - n sin^2 in the denominator as well.
                const double ours = ellip_pi(n, phi, m);
                const double ref = boost::math::ellint_3(k, n, phi);
                res.record("Pi_vs_boost", std::abs(ours - ref) / std::max(1.0, std::abs(ref)), 1e-12);
            }
            ++res.samples;
        }
    }
    std::mt19937_64 rng(opt.seed + 3);
    for (const auto& cs : detail::random_elliptic_cases(rng, 50)) {
        const auto ep = elliptic_params(cs.p);
        auto P = [&](double u) { return -u * u * u * u + ep.a * u * u + ep.b * u - ep.c; };
        const double scale = 1.0 + std::abs(ep.c) + std::pow(ep.beta2, 4);
        res.record("quartic_bracket_residual", std::max(std::abs(P(ep.beta1)), std::abs(P(ep.beta2))) / scale, 1e-10);
        if (!(ep.beta1 <= ep.u0 * (1 + 1e-12) && ep.u0 <= ep.beta2 * (1 + 1e-12)))
            res.failures.push_back("starting radius outside the quartic bracket");
        res.record("half_period_vs_quadrature",
                   std::abs(ep.half_period - 0.5 * radial_period(cs.inv, cs.p.omega)) / ep.half_period, 1e-8);
        ++res.samples;
    }
    res.notes.push_back("Legendre F and Pi checked against Boost.Math; quartic roots against the polynomial");
    return res;
}

inline SuiteResult verify_singular(const VerifyOptions& opt) {
    SuiteResult res{"singular"};
    for (double w : {0.1, 0.2, 0.38, 0.7, 0.95}) {
        const double ts = singular_onset(w);
        const auto a = integrate_entry_arc(w, ts, 20000);
        double r = a.r;
        if (opt.inject_fault) r += 1e-3;
        res.record("r_at_onset", r, 1e-6);
        res.record("rdot_at_onset", std::abs(a.rdot), 1e-6);
        const auto v = singular_field_check(a.end.c, w, 1.0, 1e-6);
        if (!v.singular) res.failures.push_back("entry arc end not classified singular at omega " + std::to_string(w));
        res.record("field_on_singular_arc", std::hypot(v.field.ux, v.field.uy), 1e-15);
        res.record("mz_drift_on_singular_arc", v.mz_drift, 1e-8);
        res.record("mz_minus_sqrt2", std::abs(std::abs(a.end.c.mz) - std::sqrt(2.0)), 1e-6);
        ++res.samples;
    }
    res.notes.push_back("entry extremals start at s = 0, r0 = omega sqrt 2; onset t_S = arccos(-omega^2)/sqrt(1+omega^2)");
    res.notes.push_back("the field is held at its last regular value once r < 1e-6 on the graze into r = 0");
    return res;
}

inline SuiteResult run_suite(const std::string& name, const VerifyOptions& opt) {
    static const std::map<std::string, std::function<SuiteResult(const VerifyOptions&)>> table{
        {"conserved", verify_conserved},     {"analytic", verify_analytic}, {"table2", verify_table2},
        {"reconstruct", verify_reconstruct}, {"final_state", verify_final_state},
        {"elliptic", verify_elliptic},       {"singular", verify_singular}};
    const auto it = table.find(name);
    if (it == table.end()) throw std::invalid_argument("unknown verification suite '" + name + "'");
    try {
        return it->second(opt);
    } catch (const std::exception& e) {
        SuiteResult r{name};
        r.failures.push_back(std::string("exception: ") + e.what());
        return r;
    }
}

/// Runs the named suites, or all of them when `only` is empty.
inline VerificationReport verify(const std::vector<std::string>& only = {}, const VerifyOptions& opt = {}) {
    VerificationReport rep;
    for (const auto& n : only.empty() ? suite_names() : only) rep.suites.push_back(run_suite(n, opt));
    return rep;
}

}  // namespace selspin
