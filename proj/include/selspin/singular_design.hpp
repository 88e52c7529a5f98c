#pragma once

// Regular-singular-regular pulses: a maximal arc of phase 0 and duration T_r,
// a zero-field dwell of duration T_s and a second maximal arc of phase
// delta_alpha and duration T_r. The first arc is the s = 0, r0 = omega sqrt 2
// extremal, which lands on r = 0 with zero radial velocity at
// t_S = arccos(-omega^2) / sqrt(1 + omega^2) = T_r.

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "selspin/pmp_extremal.hpp"
#include "selspin/spin_core.hpp"

namespace selspin {

/// Offset above which the singular set cannot be reached (arccos(-w^2) needs w <= 1).
inline constexpr double singular_omega_max = 1.0;

inline double excitation_threshold() { return 0.5 * std::sqrt(2.0 - std::sqrt(2.0)); }
inline double inversion_threshold() { return 1.0 / std::sqrt(2.0); }

inline double singular_threshold(TransferTarget t) {
    return t == TransferTarget::SelectiveExcitation ? excitation_threshold() : inversion_threshold();
}

inline void check_singular_omega(double omega, const char* who) {
    if (!(omega > 0.0) || omega > singular_omega_max)
        throw std::domain_error(std::string(who) + ": needs 0 < omega <= 1 (got " + std::to_string(omega) + ")");
}

/// Time at which the s = 0, E = 0 extremal reaches the singular set.
inline double singular_onset(double omega) {
    check_singular_omega(omega, "singular_onset");
    return std::acos(-omega * omega) / std::sqrt(1.0 + omega * omega);
}

/// Phase offset gamma, quadrant-correct: atan2(2 w sqrt(1 - w^2), 1 - 2 w^2).
inline double gamma_angle(double omega) {
    check_singular_omega(omega, "gamma_angle");
    return std::atan2(2.0 * omega * std::sqrt(1.0 - omega * omega), 1.0 - 2.0 * omega * omega);
}

struct RegSingDesign {
    TransferTarget target = TransferTarget::SelectiveExcitation;
    double omega = 0.0;
    double delta_alpha = 0.0;
    double t_singular = 0.0;  // T_s
    double t_regular = 0.0;   // T_r, duration of each maximal arc
    double gamma = 0.0;
    double t_final = 0.0;     // 2 T_r + T_s
};

/// Design from its free parameters; T_r and gamma follow from omega.
inline RegSingDesign make_design(double omega, double delta_alpha, double t_singular,
                                 TransferTarget target = TransferTarget::SelectiveExcitation) {
    if (!(t_singular >= 0.0)) throw std::invalid_argument("make_design: negative singular duration");
    RegSingDesign d;
    d.target = target;
    d.omega = omega;
    d.delta_alpha = delta_alpha;
    d.t_singular = t_singular;
    d.t_regular = singular_onset(omega);
    d.gamma = gamma_angle(omega);
    d.t_final = 2.0 * d.t_regular + t_singular;
    return d;
}

/// Three segments: (T_r, 1, 0), (T_s, 0, 0), (T_r, cos da, sin da).
inline PiecewisePulse build_pulse(const RegSingDesign& d) {
    return PiecewisePulse({{d.t_regular, 1.0, 0.0},
                           {d.t_singular, 0.0, 0.0},
                           {d.t_regular, std::cos(d.delta_alpha), std::sin(d.delta_alpha)}});
}

/// Closed-form final Bloch vectors of the three-arc pulse. With tau = w T_s
/// and h = gamma / 2:
///   z1 = -cos(da - tau - gamma),  z2 = -cos(da + tau + gamma),
///   x1 = [sin(2da - tau - h) - sin(tau + 3h)] / 2,
///   y1 = [cos(tau + 3h) - cos(2da - tau - h)] / 2,
///   x2 = [sin(tau + 3h) + sin(2da + tau + h)] / 2,
///   y2 = [cos(tau + 3h) - cos(2da + tau + h)] / 2.
inline SpinPairState final_state_formulas(const RegSingDesign& d) {
    const double tau = d.omega * d.t_singular, g = d.gamma, h = 0.5 * g, da = d.delta_alpha;
    SpinPairState s;
    s.m1 = {0.5 * (std::sin(2 * da - tau - h) - std::sin(tau + 3 * h)),
            0.5 * (std::cos(tau + 3 * h) - std::cos(2 * da - tau - h)), -std::cos(da - tau - g)};
    s.m2 = {0.5 * (std::sin(tau + 3 * h) + std::sin(2 * da + tau + h)),
            0.5 * (std::cos(tau + 3 * h) - std::cos(2 * da + tau + h)), -std::cos(da + tau + g)};
    s.time = d.t_final;
    return s;
}

/// The final-state expressions in the form found in the literature, kept to
/// document where they part from the propagator (see the verification report).
inline SpinPairState printed_final_state(const RegSingDesign& d) {
    const double tau = d.omega * d.t_singular, g = d.gamma, da = d.delta_alpha, k = 1.0 / (4.0 * d.omega);
    SpinPairState s;
    s.m1 = {k * (std::cos(2 * da - tau - g) + std::cos(tau + 2 * g) - std::cos(2 * da - tau) - std::cos(tau + g)),
            k * (std::sin(2 * da - tau - g) + std::sin(tau + 2 * g) - std::sin(2 * da - tau) - std::sin(tau + g)),
            -std::cos(2 * da - tau - g)};
    s.m2 = {k * (-std::cos(2 * da + tau + g) - std::cos(tau + 2 * g) + std::cos(2 * da + tau) + std::cos(tau + g)),
            k * (-std::sin(2 * da - tau - g) + std::sin(tau + 2 * g) + std::sin(2 * da + tau) - std::sin(tau + g)),
            -std::cos(2 * da + tau + g)};
    s.time = d.t_final;
    return s;
}

/// Which root of the z conditions to take. Minimal is the time-optimal one;
/// Alternate is the next solution, exposed for comparison.
enum class DesignBranch { Minimal, Alternate };

/// Selective excitation: z1 = 0 and z2 = 1 give da - tau - gamma = pi/2 and
/// da + tau + gamma = pi, so da = 3 pi / 4 and w T_s = pi / 4 - gamma.
inline RegSingDesign solve_excitation(double omega, DesignBranch branch = DesignBranch::Minimal) {
    check_singular_omega(omega, "solve_excitation");
    const double g = gamma_angle(omega);
    const double da = branch == DesignBranch::Minimal ? 3.0 * std::numbers::pi / 4.0 : std::numbers::pi / 4.0;
    const double phase = std::numbers::pi - da;  // tau + gamma
    double ts = (phase - g) / omega;
    if (ts < 0.0) {
        if (ts > -1e-12) ts = 0.0;
        else
            throw std::domain_error("solve_excitation: omega = " + std::to_string(omega) +
                                    " lies above the singular threshold " + std::to_string(excitation_threshold()));
    }
    return make_design(omega, da, ts, TransferTarget::SelectiveExcitation);
}

/// Selective inversion: z1 = -1 and z2 = 1 give da = tau + gamma and
/// da + tau + gamma = pi, so da = pi / 2 and w T_s = pi / 2 - gamma.
inline RegSingDesign solve_inversion(double omega, DesignBranch branch = DesignBranch::Minimal) {
    check_singular_omega(omega, "solve_inversion");
    const double g = gamma_angle(omega);
    const double da = branch == DesignBranch::Minimal ? std::numbers::pi / 2.0 : 3.0 * std::numbers::pi / 2.0;
    double ts = (da - g) / omega;
    if (ts < 0.0) {
        if (ts > -1e-12) ts = 0.0;
        else
            throw std::domain_error("solve_inversion: omega = " + std::to_string(omega) +
                                    " lies above the singular threshold " + std::to_string(inversion_threshold()));
    }
    return make_design(omega, da, ts, TransferTarget::SelectiveInversion);
}

inline RegSingDesign solve_design(TransferTarget target, double omega, DesignBranch branch = DesignBranch::Minimal) {
    return target == TransferTarget::SelectiveExcitation ? solve_excitation(omega, branch)
                                                         : solve_inversion(omega, branch);
}

/// Angles of the extremal whose first arc starts the design: s = 0 and
/// r0 = omega sqrt 2, i.e. phi1 = arccos(omega), phi2 = pi - arccos(omega).
inline ExtremalParams singular_entry_angles(double omega) {
    check_singular_omega(omega, "singular_entry_angles");
    const double a = std::acos(omega);
    return {omega, a, std::numbers::pi - a};
}

/// Entry arc state at the onset, with the radial speed read from the costate.
struct EntryArc {
    ExtremalSpinState end;
    double r = 0.0;
    double rdot = 0.0;
};

/// Joint costate + spin RK4 along the entry extremal up to t_end, n equal
/// steps. The approach to r = 0 is a graze (r ~ (t_S - t)^2), where the
/// direction of l is 0/0 and stage overshoots would flip or zero the field.
/// Below r_hold the last regular field is held instead, which is the
/// continuous extension of the (constant) field of this arc.
inline EntryArc integrate_entry_arc(double omega, double t_end, int n, double r_hold = 1e-6) {
    if (n < 1 || !(t_end >= 0.0)) throw std::invalid_argument("integrate_entry_arc: bad step count or end time");
    const auto init = initial_costates(singular_entry_angles(omega));
    if (init.degenerate) throw std::domain_error("integrate_entry_arc: degenerate entry angles (" + init.reason + ")");
    struct D {
        CostateState c;
        Vec3 a, b;
    };
    Control held = regular_field(init.state);
    auto f = [&](const CostateState& c, const Vec3& a, const Vec3& b) {
        const double r = c.r();
        const Control u = r > r_hold ? Control{c.lx / r, c.ly / r} : held;
        return D{costate_rhs(c, omega, u.ux, u.uy), a.cross(Vec3{u.ux, u.uy, -omega}),
                 b.cross(Vec3{u.ux, u.uy, omega})};
    };
    ExtremalSpinState x{init.state, SpinPairState{}};
    const double h = t_end / n;
    for (int i = 0; i < n; ++i) {
        const auto& c = x.c;
        const auto& a = x.spins.m1;
        const auto& b = x.spins.m2;
        const D k1 = f(c, a, b);
        const D k2 = f(c + (0.5 * h) * k1.c, a + (0.5 * h) * k1.a, b + (0.5 * h) * k1.b);
        const D k3 = f(c + (0.5 * h) * k2.c, a + (0.5 * h) * k2.a, b + (0.5 * h) * k2.b);
        const D k4 = f(c + h * k3.c, a + h * k3.a, b + h * k3.b);
        x.c = c + (h / 6.0) * (k1.c + 2.0 * k2.c + 2.0 * k3.c + k4.c);
        x.spins.m1 = (a + (h / 6.0) * (k1.a + 2.0 * k2.a + 2.0 * k3.a + k4.a)).normalized();
        x.spins.m2 = (b + (h / 6.0) * (k1.b + 2.0 * k2.b + 2.0 * k3.b + k4.b)).normalized();
        x.spins.time = (i + 1) * h;
        if (x.c.r() > r_hold) held = regular_field(x.c);
    }
    return {x, x.c.r(), radial_velocity(x.c, omega)};
}

// ---------------------------------------------------------------------------

struct SingularVerdict {
    bool singular = false;     // l and m have no transverse part
    bool exceptional = false;  // mz = 0 as well: the pseudo-Hamiltonian vanishes
    Control field;             // the zero field on a singular arc
    double transverse = 0.0;   // max(|lx|, |ly|, |mx|, |my|)
    double mz_drift = 0.0;     // |mz(end) - mz(0)| over the probed arc
    double max_rate = 0.0;     // largest |d/dt| of any costate component along the arc
};

/// Classifies a costate. On the singular set the only admissible field is
/// zero; the arc is then probed for `arc` time units with that field to
/// confirm that the state stays put and mz is conserved.
inline SingularVerdict singular_field_check(const CostateState& c, double omega, double arc = 1.0,
                                            double tol = 1e-8) {
    SingularVerdict v;
    v.transverse = std::max({std::abs(c.lx), std::abs(c.ly), std::abs(c.mx), std::abs(c.my)});
    v.singular = v.transverse < tol;
    if (!v.singular) {
        v.field = regular_field(c);
        return v;
    }
    v.exceptional = std::abs(c.mz) < tol;
    v.field = {0.0, 0.0};
    CostateState x = c;
    const int n = 100;
    const double h = arc / n;
    for (int i = 0; i < n; ++i) {
        auto f = [&](const CostateState& y) { return costate_rhs(y, omega, 0.0, 0.0); };
        const auto k1 = f(x);
        v.max_rate = std::max({v.max_rate, std::abs(k1.lx), std::abs(k1.ly), std::abs(k1.mx), std::abs(k1.my),
                               std::abs(k1.mz)});
        const auto k2 = f(x + (0.5 * h) * k1);
        const auto k3 = f(x + (0.5 * h) * k2);
        const auto k4 = f(x + h * k3);
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    v.mz_drift = std::abs(x.mz - c.mz);
    return v;
}

}  // namespace selspin
