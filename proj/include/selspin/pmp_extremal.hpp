#pragma once

// Regular extremals of the time-optimal two-spin problem.
//
// Costates L_i obey the same linear equation as the Bloch vectors. In the
// sum/difference coordinates l = L1 + L2, m = L1 - L2 the regular field is
// u = (lx, ly) / r with r = |(lx, ly)|, and the flow conserves
//     r - omega mz = r0,   l.m = s,   r^2 + |m|^2 = 2.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/math/quadrature/gauss.hpp>

#include "selspin/special_functions.hpp"
#include "selspin/spin_core.hpp"

namespace selspin {

struct ExtremalParams {
    double omega = 1.0;
    double phi1 = 0.0;
    double phi2 = 0.0;
};

struct CostateState {
    double lx = 0.0, ly = 0.0, lz = 0.0;
    double mx = 0.0, my = 0.0, mz = 0.0;

    [[nodiscard]] double r() const { return std::hypot(lx, ly); }
    [[nodiscard]] double s() const { return lx * mx + ly * my + lz * mz; }
    [[nodiscard]] double r0(double omega) const { return r() - omega * mz; }
    [[nodiscard]] double norm_sum() const {
        return lx * lx + ly * ly + mx * mx + my * my + mz * mz;
    }
    [[nodiscard]] Vec3 l() const { return {lx, ly, lz}; }
    [[nodiscard]] Vec3 m() const { return {mx, my, mz}; }

    friend CostateState operator+(const CostateState& a, const CostateState& b) {
        return {a.lx + b.lx, a.ly + b.ly, a.lz + b.lz, a.mx + b.mx, a.my + b.my, a.mz + b.mz};
    }
    friend CostateState operator*(double k, const CostateState& a) {
        return {k * a.lx, k * a.ly, k * a.lz, k * a.mx, k * a.my, k * a.mz};
    }
};

struct InvariantSet {
    double s = 0.0;
    double r0 = 0.0;
    double energy = 0.0;
};

inline double pseudo_energy(double omega, double r0) { return omega * omega - 0.5 * r0 * r0; }

/// |s| below this is treated as the s = 0 family.
inline constexpr double s_zero_tolerance = 1e-12;
inline bool is_zero_s(double s) { return std::abs(s) < s_zero_tolerance; }

inline InvariantSet invariants_of_state(const CostateState& c, double omega) {
    const double r0 = c.r0(omega);
    return {c.s(), r0, pseudo_energy(omega, r0)};
}

/// Default floor on r below which the regular field is undefined.
inline constexpr double default_r_min = 1e-10;

struct InitialCostates {
    CostateState state;
    Vec3 l1, l2;
    bool degenerate = false;  // r(0) = 0: no regular field at t = 0
    std::string reason;
};

/// Initial costates for the angle pair, with |L1|^2 + |L2|^2 = 1 and
/// u_y(0) = 0. Both in-plane costates have lengths proportional to
/// |sin phi2| and |sin phi1|, so the form stays finite when one sine
/// vanishes. When both vanish, or when the in-plane sum does, the result is
/// flagged as degenerate.
inline InitialCostates initial_costates(const ExtremalParams& p) {
    if (!std::isfinite(p.phi1) || !std::isfinite(p.phi2) || !std::isfinite(p.omega))
        throw std::invalid_argument("initial_costates: non-finite parameter");
    const double s1 = std::sin(p.phi1), c1 = std::cos(p.phi1);
    const double s2 = std::sin(p.phi2), c2 = std::cos(p.phi2);
    const double d = std::hypot(s1, s2);
    InitialCostates out;
    if (d < 1e-15) {
        out.degenerate = true;
        out.reason = "both sin(phi1) and sin(phi2) vanish";
        return out;
    }
    const double sign = (s2 < 0.0) ? -1.0 : 1.0;
    const double a1 = sign * s2 / d;   // signed length of L1
    const double a2 = -sign * s1 / d;  // signed length of L2
    out.l1 = {a1 * c1, a1 * s1, 0.0};
    out.l2 = {a2 * c2, a2 * s2, 0.0};
    // ly(0) = a1 s1 + a2 s2 vanishes analytically.
    out.state = {out.l1.x + out.l2.x, 0.0, 0.0, out.l1.x - out.l2.x, out.l1.y - out.l2.y, 0.0};
    if (out.state.r() < default_r_min) {
        out.degenerate = true;
        out.reason = "r(0) = 0 (phi1 = phi2 mod pi)";
    }
    return out;
}

/// s and r0 from the angles; both are pi-periodic in each angle. The corner
/// points where both sines vanish have no limit and map to s = r0 = 0.
inline InvariantSet invariants_from_angles(const ExtremalParams& p) {
    const double dm = p.phi2 - p.phi1, dp = p.phi2 + p.phi1;
    const double den = 1.0 - std::cos(dm) * std::cos(dp);
    double s = 0.0, r0 = 0.0;
    if (den > 1e-300) {
        s = std::sin(dm) * std::sin(dp) / den;
        r0 = std::min(std::sqrt(2.0), std::sqrt(std::sin(dm) * std::sin(dm) / den));
    }
    return {s, r0, pseudo_energy(p.omega, r0)};
}

// ---------------------------------------------------------------------------
// Dynamics.

class SingularSetError : public std::runtime_error {
public:
    explicit SingularSetError(double r)
        : std::runtime_error("extremal reached the singular set (r = " + std::to_string(r) + ")"), r_(r) {}
    [[nodiscard]] double radius() const { return r_; }

private:
    double r_;
};

/// Costate derivative for an arbitrary field (ux, uy).
inline CostateState costate_rhs(const CostateState& c, double omega, double ux, double uy) {
    return {-omega * c.my - c.lz * uy,
            omega * c.mx + c.lz * ux,
            c.lx * uy - c.ly * ux,
            -omega * c.ly - c.mz * uy,
            omega * c.lx + c.mz * ux,
            c.mx * uy - c.my * ux};
}

/// dr/dt = omega (ly mx - lx my) / r, independent of the field.
inline double radial_velocity(const CostateState& c, double omega) {
    const double r = c.r();
    if (r == 0.0) return 0.0;
    return omega * (c.ly * c.mx - c.lx * c.my) / r;
}

/// Regular field at this costate, or the zero field when r < r_min.
inline Control regular_field(const CostateState& c, double r_min = default_r_min) {
    const double r = c.r();
    if (r < r_min) return {};
    return {c.lx / r, c.ly / r};
}

/// Reduced extremal flow with u = l / r. Throws SingularSetError when r < r_min.
inline CostateState extremal_rhs(const CostateState& c, double omega, double r_min = default_r_min) {
    const double r = c.r();
    if (r < r_min) throw SingularSetError(r);
    return costate_rhs(c, omega, c.lx / r, c.ly / r);
}

/// Joint costate + spin state advanced by one RK4 step. Stage fields come from
/// the stage costates; stages inside the singular set use the zero field.
struct ExtremalSpinState {
    CostateState c;
    SpinPairState spins;
};

inline CostateState rk4_costate_step(const CostateState& c, double omega, double h, double r_min = default_r_min) {
    auto f = [&](const CostateState& x) {
        const Control u = regular_field(x, r_min);
        return costate_rhs(x, omega, u.ux, u.uy);
    };
    const CostateState k1 = f(c);
    const CostateState k2 = f(c + (0.5 * h) * k1);
    const CostateState k3 = f(c + (0.5 * h) * k2);
    const CostateState k4 = f(c + h * k3);
    return c + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

inline ExtremalSpinState rk4_joint_step(const ExtremalSpinState& x, double omega, double h,
                                        double r_min = default_r_min) {
    struct D {
        CostateState c;
        Vec3 a, b;
    };
    auto f = [&](const CostateState& c, const Vec3& a, const Vec3& b) {
        const Control u = regular_field(c, r_min);
        return D{costate_rhs(c, omega, u.ux, u.uy), a.cross(Vec3{u.ux, u.uy, -omega}),
                 b.cross(Vec3{u.ux, u.uy, omega})};
    };
    const auto& c = x.c;
    const auto& a = x.spins.m1;
    const auto& b = x.spins.m2;
    const D k1 = f(c, a, b);
    const D k2 = f(c + (0.5 * h) * k1.c, a + (0.5 * h) * k1.a, b + (0.5 * h) * k1.b);
    const D k3 = f(c + (0.5 * h) * k2.c, a + (0.5 * h) * k2.a, b + (0.5 * h) * k2.b);
    const D k4 = f(c + h * k3.c, a + h * k3.a, b + h * k3.b);
    ExtremalSpinState out;
    out.c = c + (h / 6.0) * (k1.c + 2.0 * k2.c + 2.0 * k3.c + k4.c);
    out.spins.m1 = (a + (h / 6.0) * (k1.a + 2.0 * k2.a + 2.0 * k3.a + k4.a)).normalized();
    out.spins.m2 = (b + (h / 6.0) * (k1.b + 2.0 * k2.b + 2.0 * k3.b + k4.b)).normalized();
    out.spins.time = x.spins.time + h;
    return out;
}

struct InvariantDrift {
    double r0 = 0.0;     // max |(r - omega mz) - r0|
    double s = 0.0;      // max |l.m - s|
    double norm = 0.0;   // max |r^2 + |m|^2 - 2|
    double lz = 0.0;     // max |lz|
};

struct ExtremalTrajectory {
    double omega = 0.0;
    InvariantSet invariants;
    std::vector<double> times;
    std::vector<CostateState> states;
    std::vector<Control> controls;
    std::vector<double> alpha;  // unwrapped phase of (lx, ly)
    InvariantDrift drift;
    bool singular_hit = false;
    double t_singular = std::numeric_limits<double>::quiet_NaN();
};

namespace detail {

inline double unwrap_next(double prev, double raw) {
    double a = raw;
    while (a - prev > std::numbers::pi) a -= 2.0 * std::numbers::pi;
    while (a - prev < -std::numbers::pi) a += 2.0 * std::numbers::pi;
    return a;
}

inline void record_drift(InvariantDrift& d, const CostateState& c, const InvariantSet& inv, double omega) {
    d.r0 = std::max(d.r0, std::abs(c.r0(omega) - inv.r0));
    d.s = std::max(d.s, std::abs(c.s() - inv.s));
    d.norm = std::max(d.norm, std::abs(c.norm_sum() - 2.0));
    d.lz = std::max(d.lz, std::abs(c.lz));
}

}  // namespace detail

/// RK4 integration from a given costate; the last step is shortened to land
/// on t_end. Stops early, flagging singular_hit, once r < r_min.
inline ExtremalTrajectory integrate_costate(const CostateState& start, double omega, double t_end, double step,
                                            double r_min = default_r_min) {
    if (!(step > 0.0)) throw std::invalid_argument("integrate_extremal: step must be positive");
    if (!(t_end >= 0.0)) throw std::invalid_argument("integrate_extremal: t_end must be non-negative");
    ExtremalTrajectory tr;
    tr.omega = omega;
    tr.invariants = invariants_of_state(start, omega);
    CostateState c = start;
    const auto n_steps = static_cast<std::size_t>(std::ceil(t_end / step - 1e-9));
    tr.times.reserve(n_steps + 1);
    tr.states.reserve(n_steps + 1);
    auto push = [&](double t, const CostateState& x) {
        tr.times.push_back(t);
        tr.states.push_back(x);
        tr.controls.push_back(regular_field(x, r_min));
        const double raw = std::atan2(x.ly, x.lx);
        tr.alpha.push_back(tr.alpha.empty() ? raw : detail::unwrap_next(tr.alpha.back(), raw));
        detail::record_drift(tr.drift, x, tr.invariants, omega);
    };
    push(0.0, c);
    if (c.r() < r_min) {
        tr.singular_hit = true;
        tr.t_singular = 0.0;
        return tr;
    }
    for (std::size_t k = 0; k < n_steps; ++k) {
        const double t = static_cast<double>(k) * step;
        const double h = (k + 1 == n_steps) ? (t_end - t) : step;
        if (h <= 0.0) break;
        c = rk4_costate_step(c, omega, h, r_min);
        push(t + h, c);
        if (c.r() < r_min) {
            tr.singular_hit = true;
            tr.t_singular = t + h;
            break;
        }
    }
    return tr;
}

/// Extremal generated by the angle pair. Throws for degenerate initial costates.
inline ExtremalTrajectory integrate_extremal(const ExtremalParams& p, double t_end, double step,
                                             double r_min = default_r_min) {
    const auto init = initial_costates(p);
    if (init.degenerate) throw std::invalid_argument("integrate_extremal: degenerate angles (" + init.reason + ")");
    return integrate_costate(init.state, p.omega, t_end, step, r_min);
}

/// Piecewise-linear field sampled along an extremal (nodes are exact).
inline SampledField field_of(const ExtremalTrajectory& tr) {
    if (tr.times.size() < 2) return SampledField(0.0, 1.0, tr.controls);
    return SampledField(tr.times.front(), tr.times[1] - tr.times[0], tr.controls);
}

/// Largest |r^2 d(alpha)/dt - omega s| along the integrated states, with the
/// phase rate read from the flow: r^2 alpha' = lx ly' - ly lx'. A finite
/// difference of the stored phase is no good near a close approach to r = 0,
/// where alpha turns fast and the stencil error swamps the residual.
inline double kepler_residual(const ExtremalTrajectory& tr) {
    double worst = 0.0;
    for (std::size_t i = 0; i < tr.states.size(); ++i) {
        const auto& c = tr.states[i];
        const auto d = costate_rhs(c, tr.omega, tr.controls[i].ux, tr.controls[i].uy);
        worst = std::max(worst, std::abs(c.lx * d.ly - c.ly * d.lx - tr.omega * tr.invariants.s));
    }
    return worst;
}

// ---------------------------------------------------------------------------
// Effective one-dimensional motion.

struct PotentialProfile {
    double omega = 0.0, s = 0.0, r0 = 0.0, energy = 0.0;

    [[nodiscard]] double operator()(double r) const {
        return 0.5 * (1.0 + omega * omega) * r * r - r0 * r + omega * omega * s * s / (2.0 * r * r);
    }

    /// Radii where U(r) = E bracketing r0, as (inner, outer). For s = 0 the
    /// inner value is the smaller root of the quadratic and may be negative.
    [[nodiscard]] std::pair<double, double> turning_points() const {
        const double w2 = omega * omega;
        if (is_zero_s(s)) {
            const double disc = std::max(0.0, r0 * r0 + 2.0 * (1.0 + w2) * energy);
            return {(r0 - std::sqrt(disc)) / (1.0 + w2), (r0 + std::sqrt(disc)) / (1.0 + w2)};
        }
        const double k = w2 * s * s;
        const auto roots = quartic_roots((2.0 * w2 - r0 * r0) / k, 2.0 * r0 / k, (1.0 + w2) / k, 1.0 / r0);
        if (!roots.has_bracket) throw std::domain_error("potential: no classically allowed interval around r0");
        return {1.0 / roots.beta2, 1.0 / roots.beta1};
    }
};

inline PotentialProfile potential(const InvariantSet& inv, double omega) {
    return {omega, inv.s, inv.r0, pseudo_energy(omega, inv.r0)};
}

namespace detail {

// Time from the inner turning point to angle theta, where
// r = (ra + rb)/2 - (rb - ra)/2 cos(theta). The substitution cancels both
// inverse square roots at the turning points, leaving a smooth integrand.
inline double time_from_inner(const PotentialProfile& pot, double ra, double rb, double theta) {
    const double w2 = pot.omega * pot.omega;
    const double c = std::sqrt(1.0 + w2);
    if (is_zero_s(pot.s)) return theta / c;
    const double sigma = ra + rb, prod = ra * rb;
    const double b1 = sigma - 2.0 * pot.r0 / (1.0 + w2);
    const double b0 = w2 * pot.s * pot.s / ((1.0 + w2) * prod);
    const double mid = 0.5 * sigma, half = 0.5 * (rb - ra);
    auto integrand = [&](double th) {
        const double r = mid - half * std::cos(th);
        return r / (c * std::sqrt(std::max(r * r + b1 * r + b0, 1e-300)));
    };
    using Gauss = boost::math::quadrature::gauss<double, 20>;
    double prev = std::numeric_limits<double>::infinity();
    for (int panels = 1; panels <= 1024; panels *= 2) {
        double sum = 0.0;
        const double w = theta / panels;
        for (int i = 0; i < panels; ++i) sum += Gauss::integrate(integrand, i * w, (i + 1) * w);
        if (std::abs(sum - prev) <= 1e-14 * (1.0 + std::abs(sum))) return sum;
        prev = sum;
    }
    return prev;
}

inline double theta_of_radius(double r, double ra, double rb) {
    const double c = std::clamp((0.5 * (ra + rb) - r) / (0.5 * (rb - ra)), -1.0, 1.0);
    return std::acos(c);
}

}  // namespace detail

/// |t| to move monotonically from r0 to r: the integral of
/// dr' / sqrt(2E - 2U(r')).
inline double radius_quadrature(const InvariantSet& inv, double omega, double r) {
    const auto pot = potential(inv, omega);
    const auto [ra, rb] = pot.turning_points();
    const double tol = 1e-12 * (1.0 + std::abs(rb));
    if (!(r >= ra - tol && r <= rb + tol))
        throw std::domain_error("radius_quadrature: r = " + std::to_string(r) + " outside the allowed region [" +
                                std::to_string(ra) + ", " + std::to_string(rb) + "]");
    if (rb - ra < 1e-12) return 0.0;
    const double th0 = detail::theta_of_radius(inv.r0, ra, rb);
    const double th1 = detail::theta_of_radius(r, ra, rb);
    return std::abs(detail::time_from_inner(pot, ra, rb, th1) - detail::time_from_inner(pot, ra, rb, th0));
}

/// Full radial period (inner -> outer -> inner) of a regular extremal.
inline double radial_period(const InvariantSet& inv, double omega) {
    const auto pot = potential(inv, omega);
    const auto [ra, rb] = pot.turning_points();
    if (rb - ra < 1e-12) throw std::domain_error("radial_period: degenerate well (constant radius)");
    if (is_zero_s(inv.s) && ra < 0.0)
        throw std::domain_error("radial_period: s = 0 with E > 0 passes through r = 0");
    return 2.0 * detail::time_from_inner(pot, ra, rb, std::numbers::pi);
}

}  // namespace selspin
