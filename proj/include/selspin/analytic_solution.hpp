#pragma once

// Closed-form regular extremals.
//
// With u = 1/r the radial and phase equations reduce to
//     dt     = du / (omega |s| u sqrt(P(u)))
//     dalpha = sgn(s) u du / sqrt(P(u))
// where P(u) = -u^4 + A u^2 + B u - C. The quartic is split into two
// quadratics, and the Moebius change z = K (u - c1) / (u - c2) turns both
// integrals into Legendre integrals of the first and third kind plus an
// arctangent (or area tangent) term. For s = 0 the motion is harmonic in r.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "selspin/pmp_extremal.hpp"
#include "selspin/special_functions.hpp"
#include "selspin/spin_core.hpp"

namespace selspin {

enum class EllipticBranch { RealGammaPair, ComplexGammaPair };

inline std::string to_string(EllipticBranch b) {
    return b == EllipticBranch::RealGammaPair ? "real" : "complex";
}

/// Raised when the elliptic form does not apply: s = 0, or a degenerate well
/// where the radius is constant.
class EllipticNotApplicable : public std::domain_error {
public:
    enum class Reason { ZeroS, DegenerateWell, NoBracket, NonFinite };
    EllipticNotApplicable(Reason r, const std::string& what) : std::domain_error(what), reason_(r) {}
    [[nodiscard]] Reason reason() const { return reason_; }

private:
    Reason reason_;
};

/// Initial radial motion: +1 when r decreases first (u grows), -1 otherwise.
enum class RadialDirection : int { Decreasing = 1, Increasing = -1 };

struct EllipticSolutionParams {
    double omega = 0.0, s = 0.0, r0 = 0.0;
    double u0 = 0.0;  // 1 / r0
    double a = 0.0, b = 0.0, c = 0.0;
    double beta1 = 0.0, beta2 = 0.0;
    std::complex<double> gamma1{}, gamma2{};
    EllipticBranch branch = EllipticBranch::RealGammaPair;

    double lambda1 = 0.0, lambda2 = 0.0;
    double c1 = 0.0, c2 = 0.0;         // centres of the two squares
    double kz = 0.0;                   // scale K of the Moebius change
    double kz_prime = 0.0;             // K c1 / c2
    double m = 0.0;                    // lambda1 / lambda2 (negative on the complex branch)
    double m_eff = 0.0;                // parameter actually passed to F and Pi
    double n_a = 0.0, n_b = 0.0;       // characteristics of the time and phase integrals
    double k_a = 0.0, k_b = 0.0;       // arctangent scales (n - m) / (1 - n)
    double kappa = 0.0;                // Jacobian |du / dz| normalization

    // Coefficients on the basis actually evaluated: index 0 is the
    // arctangent term, 1 the first-kind, 2 the third-kind integral.
    std::array<double, 3> time_coeff{}, phase_coeff{};

    int direction = 1;                 // +1: u increases first
    double half_period = 0.0;          // time for one sweep beta1 -> beta2
    double half_phase = 0.0;           // |alpha| gained on one sweep

    // Calibrated antiderivatives at the bracket ends and at u0.
    double time_lo = 0.0, time_hi = 0.0, time_u0 = 0.0;
    double phase_lo = 0.0, phase_hi = 0.0, phase_u0 = 0.0;
    double time_sign = 1.0, phase_sign = 1.0;
};

namespace detail {

inline double zmap(const EllipticSolutionParams& p, double u) {
    return std::clamp(p.kz * (u - p.c1) / (u - p.c2), -1.0, 1.0);
}

// First-kind basis in z.
inline double basis_f(const EllipticSolutionParams& p, double z) {
    if (p.branch == EllipticBranch::RealGammaPair) return ellip_f(std::asin(z), p.m);
    return -ellip_f(std::acos(z), p.m_eff) / std::sqrt(1.0 - p.m);
}

// Third-kind basis: integral of dz / ((1 - n z^2) sqrt((1 - z^2)(1 - m z^2))).
inline double basis_pi(const EllipticSolutionParams& p, double n, double z) {
    if (p.branch == EllipticBranch::RealGammaPair) return ellip_pi(n, std::asin(z), p.m);
    return -ellip_pi(n / (n - 1.0), std::acos(z), p.m_eff) / ((1.0 - n) * std::sqrt(1.0 - p.m));
}

inline double arctan_term(double kk, double y) {
    if (kk > 0.0) return std::atan(std::sqrt(kk) * y) / std::sqrt(kk);
    if (kk < 0.0) return std::atanh(std::sqrt(-kk) * y) / std::sqrt(-kk);
    return y;
}

// Even-in-z part: integral of z dz / ((1 - n z^2) sqrt((1 - z^2)(1 - m z^2))).
inline double basis_odd(const EllipticSolutionParams& p, double n, double kk, double z) {
    const double y = std::sqrt(std::max(0.0, (1.0 - z * z) / (1.0 - p.m * z * z)));
    return (arctan_term(kk, 1.0) - arctan_term(kk, y)) / (1.0 - n);
}

inline double raw_time_z(const EllipticSolutionParams& p, double z) {
    const double kp = p.kz_prime;
    return (basis_f(p, z) + (p.kz - kp) * (basis_pi(p, p.n_a, z) / kp + basis_odd(p, p.n_a, p.k_a, z) / (kp * kp))) /
           p.c2;
}

inline double raw_phase_z(const EllipticSolutionParams& p, double z) {
    return p.c2 * basis_f(p, z) + (p.c1 - p.c2) * (basis_pi(p, p.n_b, z) + basis_odd(p, p.n_b, p.k_b, z) / p.kz);
}

inline double raw_time(const EllipticSolutionParams& p, double u) { return raw_time_z(p, zmap(p, u)); }
inline double raw_phase(const EllipticSolutionParams& p, double u) { return raw_phase_z(p, zmap(p, u)); }

inline double scaled_time(const EllipticSolutionParams& p, double raw) {
    return p.time_sign * p.kappa * raw / (p.omega * std::abs(p.s));
}

}  // namespace detail

/// Calibrated time antiderivative, increasing in u.
inline double time_antiderivative(const EllipticSolutionParams& p, double u) {
    if (u <= p.beta1) return p.time_lo;
    if (u >= p.beta2) return p.time_hi;
    return detail::scaled_time(p, detail::raw_time(p, u));
}

/// Calibrated |phase| antiderivative, increasing in u.
inline double phase_antiderivative(const EllipticSolutionParams& p, double u) {
    if (u <= p.beta1) return p.phase_lo;
    if (u >= p.beta2) return p.phase_hi;
    return p.phase_sign * p.kappa * detail::raw_phase(p, u);
}

/// Builds the elliptic representation of the extremal with invariants inv.
inline EllipticSolutionParams elliptic_params(const InvariantSet& inv, double omega,
                                              RadialDirection dir = RadialDirection::Decreasing) {
    using Reason = EllipticNotApplicable::Reason;
    if (is_zero_s(inv.s)) throw EllipticNotApplicable(Reason::ZeroS, "elliptic_params: s = 0, use s0_solution");
    if (!(omega > 0.0) || !(inv.r0 > 0.0))
        throw EllipticNotApplicable(Reason::NonFinite, "elliptic_params: needs omega > 0 and r0 > 0");
    EllipticSolutionParams p;
    p.omega = omega;
    p.s = inv.s;
    p.r0 = inv.r0;
    p.u0 = 1.0 / inv.r0;
    const double k = omega * omega * inv.s * inv.s;
    p.a = (2.0 * omega * omega - inv.r0 * inv.r0) / k;
    p.b = 2.0 * inv.r0 / k;
    p.c = (1.0 + omega * omega) / k;
    const auto roots = quartic_roots(p.a, p.b, p.c, p.u0);
    if (!roots.has_bracket) throw EllipticNotApplicable(Reason::NoBracket, "elliptic_params: no root bracket around 1/r0");
    if (roots.degenerate_well)
        throw EllipticNotApplicable(Reason::DegenerateWell, "elliptic_params: degenerate well (constant radius)");
    p.beta1 = roots.beta1;
    p.beta2 = roots.beta2;
    p.gamma1 = roots.gamma1;
    p.gamma2 = roots.gamma2;

    const double S = p.beta1 + p.beta2, pr = p.beta1 * p.beta2, q = p.c / pr;
    const double delta = (pr - q) * (pr - q) + 2.0 * S * S * (pr + q);
    const double den = S * S - 4.0 * q;
    p.lambda1 = (S * S + 2.0 * (pr + q) - 2.0 * std::sqrt(delta)) / den;
    p.lambda2 = (S * S + 2.0 * (pr + q) + 2.0 * std::sqrt(delta)) / den;
    if (p.lambda1 > p.lambda2) std::swap(p.lambda1, p.lambda2);
    // With den < 0 the ordering flips; lambda1 is the root in [0, 1].
    if (!(p.lambda1 >= 0.0 && p.lambda1 <= 1.0)) std::swap(p.lambda1, p.lambda2);
    p.branch = (p.lambda2 > 0.0) ? EllipticBranch::RealGammaPair : EllipticBranch::ComplexGammaPair;

    const double l1 = p.lambda1, l2 = p.lambda2;
    p.c1 = 0.5 * S * (1.0 - l1) / (1.0 + l1);
    p.c2 = 0.5 * S * (1.0 - l2) / (1.0 + l2);
    p.kz = std::sqrt(l2 * (1.0 + l1) / (l1 * (1.0 + l2)));
    p.kz_prime = p.kz * p.c1 / p.c2;
    p.m = l1 / l2;
    p.m_eff = (p.branch == EllipticBranch::RealGammaPair) ? p.m : l1 / (l1 - l2);
    p.n_a = 1.0 / (p.kz_prime * p.kz_prime);
    p.n_b = 1.0 / (p.kz * p.kz);
    p.k_a = (p.n_a - p.m) / (1.0 - p.n_a);
    p.k_b = (p.n_b - p.m) / (1.0 - p.n_b);
    p.kappa = std::abs(l2 - l1) / (std::abs(p.kz * (p.c1 - p.c2) * (1.0 + l2)) * std::sqrt(l1));

    for (double v : {p.lambda1, p.lambda2, p.c1, p.c2, p.kz, p.kz_prime, p.n_a, p.n_b, p.kappa})
        if (!std::isfinite(v))
            throw EllipticNotApplicable(Reason::NonFinite, "elliptic_params: non-finite parameter");
    if (!(p.n_a < 1.0 && p.n_b < 1.0))
        throw EllipticNotApplicable(Reason::NonFinite, "elliptic_params: characteristic outside (-inf, 1)");

    // The bracket ends map to z = -1 and z = +1. Roundoff leaves z a few ulps
    // inside, which the square-root behaviour of asin would amplify to 1e-7,
    // so the end values use the exact images.
    const double z_lo_raw = p.kz * (p.beta1 - p.c1) / (p.beta1 - p.c2);
    const double z_hi_raw = p.kz * (p.beta2 - p.c1) / (p.beta2 - p.c2);
    if (!(std::abs(std::abs(z_lo_raw) - 1.0) < 1e-6 && std::abs(std::abs(z_hi_raw) - 1.0) < 1e-6))
        throw EllipticNotApplicable(Reason::NonFinite, "elliptic_params: bracket does not map to z = +/-1");
    const double z_lo = std::copysign(1.0, z_lo_raw), z_hi = std::copysign(1.0, z_hi_raw);

    // Orientation: both integrands are positive on (beta1, beta2).
    const double t_lo = detail::raw_time_z(p, z_lo), t_hi = detail::raw_time_z(p, z_hi);
    const double a_lo = detail::raw_phase_z(p, z_lo), a_hi = detail::raw_phase_z(p, z_hi);
    p.time_sign = (t_hi >= t_lo) ? 1.0 : -1.0;
    p.phase_sign = (a_hi >= a_lo) ? 1.0 : -1.0;

    p.time_lo = detail::scaled_time(p, t_lo);
    p.time_hi = detail::scaled_time(p, t_hi);
    p.time_u0 = time_antiderivative(p, p.u0);
    p.phase_lo = p.phase_sign * p.kappa * a_lo;
    p.phase_hi = p.phase_sign * p.kappa * a_hi;
    p.phase_u0 = phase_antiderivative(p, p.u0);
    p.half_period = p.time_hi - p.time_lo;
    p.half_phase = p.phase_hi - p.phase_lo;

    p.direction = static_cast<int>(dir);
    const double tol = 1e-10 * (1.0 + p.beta2);
    if (p.u0 - p.beta1 < tol) p.direction = 1;
    if (p.beta2 - p.u0 < tol) p.direction = -1;

    // Coefficient sets for reporting, on the evaluated basis.
    const double tk = p.time_sign * p.kappa, ak = p.phase_sign * p.kappa;
    const double kp = p.kz_prime;
    const bool real_branch = p.branch == EllipticBranch::RealGammaPair;
    const double sf = real_branch ? 1.0 : -1.0 / std::sqrt(1.0 - p.m);
    const double spa = real_branch ? 1.0 : -1.0 / ((1.0 - p.n_a) * std::sqrt(1.0 - p.m));
    const double spb = real_branch ? 1.0 : -1.0 / ((1.0 - p.n_b) * std::sqrt(1.0 - p.m));
    p.time_coeff = {-tk * (p.kz - kp) / (p.c2 * kp * kp * (1.0 - p.n_a) * std::sqrt(std::abs(p.k_a))),
                    tk / p.c2 * sf, tk * (p.kz - kp) / (p.c2 * kp) * spa};
    p.phase_coeff = {-ak * (p.c1 - p.c2) / (p.kz * (1.0 - p.n_b) * std::sqrt(std::abs(p.k_b))), ak * p.c2 * sf,
                     ak * (p.c1 - p.c2) * spb};
    return p;
}

/// Direction of the first radial motion read from the initial costates.
inline RadialDirection initial_direction(const CostateState& c, double omega) {
    return radial_velocity(c, omega) <= 0.0 ? RadialDirection::Decreasing : RadialDirection::Increasing;
}

inline EllipticSolutionParams elliptic_params(const ExtremalParams& ep) {
    const auto init = initial_costates(ep);
    if (init.degenerate) throw std::invalid_argument("elliptic_params: degenerate angles (" + init.reason + ")");
    return elliptic_params(invariants_of_state(init.state, ep.omega), ep.omega,
                           initial_direction(init.state, ep.omega));
}

namespace detail {

inline void check_bracket(const EllipticSolutionParams& p, double u) {
    const double tol = 1e-10 * (1.0 + p.beta2);
    if (!(u >= p.beta1 - tol && u <= p.beta2 + tol))
        throw std::domain_error("u = " + std::to_string(u) + " outside the root bracket [" +
                                std::to_string(p.beta1) + ", " + std::to_string(p.beta2) + "]");
}

}  // namespace detail

/// Time needed to move monotonically from u0 to u.
inline double analytic_time_of_u(const EllipticSolutionParams& p, double u) {
    detail::check_bracket(p, u);
    return std::abs(time_antiderivative(p, std::clamp(u, p.beta1, p.beta2)) - p.time_u0);
}

/// Phase gained on the same monotone sweep; its sign is the sign of s.
inline double analytic_phase_of_u(const EllipticSolutionParams& p, double u) {
    detail::check_bracket(p, u);
    const double d = std::abs(phase_antiderivative(p, std::clamp(u, p.beta1, p.beta2)) - p.phase_u0);
    return std::copysign(d, p.s);
}

struct RadiusPhase {
    double r = 0.0;
    double alpha = 0.0;
};

namespace detail {

// Solves time_antiderivative(u) = target on [beta1, beta2].
inline double invert_time(const EllipticSolutionParams& p, double target) {
    double lo = p.beta1, hi = p.beta2;
    if (target <= p.time_lo) return lo;
    if (target >= p.time_hi) return hi;
    double u = lo + (hi - lo) * (target - p.time_lo) / (p.time_hi - p.time_lo);
    for (int it = 0; it < 200; ++it) {
        const double f = time_antiderivative(p, u) - target;
        if (f > 0.0) hi = u; else lo = u;
        const double pu = -u * u * u * u + p.a * u * u + p.b * u - p.c;
        double next = 0.5 * (lo + hi);
        if (pu > 0.0) {
            const double slope = 1.0 / (p.omega * std::abs(p.s) * u * std::sqrt(pu));
            const double newton = u - f / slope;
            if (newton > lo && newton < hi) next = newton;
        }
        if (std::abs(next - u) <= 1e-16 * (1.0 + std::abs(u)) || hi - lo <= 4e-16 * (1.0 + hi)) return next;
        u = next;
    }
    return u;
}

// Position on the doubled sweep clock: returns (u, accumulated |phase|).
inline std::pair<double, double> sweep_state(const EllipticSolutionParams& p, double tau) {
    const double H = p.half_period;
    const double n = std::floor(tau / (2.0 * H));
    const double rem = tau - 2.0 * H * n;
    double u, acc;
    if (rem <= H) {
        u = invert_time(p, p.time_lo + rem);
        acc = phase_antiderivative(p, u) - p.phase_lo;
    } else {
        u = invert_time(p, p.time_hi - (rem - H));
        acc = p.half_phase + (p.phase_hi - phase_antiderivative(p, u));
    }
    return {u, 2.0 * p.half_phase * n + acc};
}

}  // namespace detail

/// (r(t), alpha(t)) with alpha(0) = 0 and alpha unwrapped.
inline RadiusPhase elliptic_solution_at(const EllipticSolutionParams& p, double t) {
    if (!(t >= 0.0)) throw std::invalid_argument("elliptic_solution_at: t must be non-negative");
    const double tau0 = (p.direction > 0) ? (p.time_u0 - p.time_lo) : (p.half_period + p.time_hi - p.time_u0);
    const auto [u0s, acc0] = detail::sweep_state(p, tau0);
    (void)u0s;
    const auto [u, acc] = detail::sweep_state(p, tau0 + t);
    return {1.0 / u, std::copysign(acc - acc0, p.s)};
}

// ---------------------------------------------------------------------------
// s = 0.

struct S0Solution {
    double omega = 0.0, r0 = 0.0, energy = 0.0;
    double freq = 0.0;        // sqrt(1 + omega^2)
    double amplitude = 0.0;   // omega sqrt(2(1 + omega^2) - r0^2)
    double rho0 = 0.0;        // initial phase of the harmonic argument
    double u_star = 0.0;      // argument where r = 0 (E > 0 only)
};

inline S0Solution s0_setup(double omega, double r0, RadialDirection dir = RadialDirection::Decreasing) {
    if (!(omega > 0.0)) throw std::invalid_argument("s0_solution: omega must be positive");
    if (!(r0 >= 0.0) || r0 > std::sqrt(2.0) + 1e-12) throw std::invalid_argument("s0_solution: r0 must lie in [0, sqrt 2]");
    S0Solution z;
    z.omega = omega;
    z.r0 = r0;
    z.energy = pseudo_energy(omega, r0);
    if (std::abs(z.energy) < 1e-12)
        throw std::domain_error("s0_solution: E = 0 is the singular case");
    const double w2 = omega * omega;
    const double W = std::max(0.0, 2.0 * (1.0 + w2) - r0 * r0);
    z.freq = std::sqrt(1.0 + w2);
    z.amplitude = omega * std::sqrt(W);
    const double base = std::acos(std::clamp(-omega * r0 / std::sqrt(W), -1.0, 1.0));
    z.rho0 = (dir == RadialDirection::Decreasing) ? -base : base;
    if (z.energy > 0.0) z.u_star = std::acos(std::clamp(r0 / z.amplitude, -1.0, 1.0));
    return z;
}

/// Zero crossings of r in (0, t_max] for E > 0 (empty when E < 0).
inline std::vector<double> s0_crossing_times(const S0Solution& z, double t_max) {
    std::vector<double> out;
    if (z.energy < 0.0) return out;
    constexpr double two_pi = 2.0 * std::numbers::pi;
    double rho = z.rho0, t = 0.0;
    for (int n = 0; n < 1000000; ++n) {
        const double v = z.freq * t + rho;
        double gap = std::fmod(-z.u_star - v, two_pi);
        if (gap <= 1e-15) gap += two_pi;
        const double tn = t + gap / z.freq;
        if (tn > t_max) break;
        out.push_back(tn);
        t = tn;
        rho += 2.0 * z.u_star;
    }
    return out;
}

/// Closed-form (r(t), alpha(t)) for s = 0 with alpha(0) = 0. For E > 0 the
/// phase gains pi at each passage through r = 0.
inline RadiusPhase s0_solution(double omega, double r0, double t, RadialDirection dir = RadialDirection::Decreasing) {
    if (!(t >= 0.0)) throw std::invalid_argument("s0_solution: t must be non-negative");
    const auto z = s0_setup(omega, r0, dir);
    const auto crossings = s0_crossing_times(z, t);
    const double n = static_cast<double>(crossings.size());
    const double rho = z.rho0 + 2.0 * n * z.u_star;
    const double r = (r0 - z.amplitude * std::cos(z.freq * t + rho)) / (1.0 + omega * omega);
    return {std::max(0.0, r), n * std::numbers::pi};
}

// ---------------------------------------------------------------------------
// Bloch vectors from the costate frame.

struct EulerAngles {
    double theta = 0.0, phi = 0.0, psi = 0.0;
};

/// Margin 2(1 +/- s) - mz^2 of the chart for spin 1 (sign +1) or spin 2 (-1).
inline double chart_margin(const CostateState& c, double s, int spin) {
    const double k = (spin == 1) ? 1.0 + s : 1.0 - s;
    return 2.0 * k - c.mz * c.mz;
}

/// Bloch vectors from (l, m) and the two rotation angles psi.
inline SpinPairState bloch_from_costates(const CostateState& c, double s, double psi1, double psi2) {
    const double k1 = 2.0 * (1.0 + s), k2 = 2.0 * (1.0 - s);
    const double d1 = std::sqrt(std::max(0.0, k1 - c.mz * c.mz));
    const double d2 = std::sqrt(std::max(0.0, k2 - c.mz * c.mz));
    const double q1 = std::sqrt(k1), q2 = std::sqrt(k2);
    const double ax = c.lx + c.mx, ay = c.ly + c.my;  // 2 L1
    const double bx = c.lx - c.mx, by = c.ly - c.my;  // 2 L2
    SpinPairState out;
    out.m1 = {-c.mz * ax * std::sin(psi1) / (q1 * d1) - ay * std::cos(psi1) / d1,
              -c.mz * ay * std::sin(psi1) / (q1 * d1) + ax * std::cos(psi1) / d1,
              std::sqrt(std::max(0.0, 1.0 - c.mz * c.mz / k1)) * std::sin(psi1)};
    out.m2 = {c.mz * bx * std::sin(psi2) / (q2 * d2) - by * std::cos(psi2) / d2,
              c.mz * by * std::sin(psi2) / (q2 * d2) + bx * std::cos(psi2) / d2,
              std::sqrt(std::max(0.0, 1.0 - c.mz * c.mz / k2)) * std::sin(psi2)};
    return out;
}

/// d(psi)/dt in terms of r and the invariants.
inline double psi_rate(double r, const InvariantSet& inv, double omega, int spin) {
    const double sg = (spin == 1) ? inv.s : -inv.s;
    const double w2 = omega * omega;
    const double k = 2.0 * (1.0 + sg);
    const double dr = r - inv.r0;
    return -(r * r + sg) * w2 * std::sqrt(k) / (r * (k * w2 - dr * dr));
}

/// d(psi)/dt from the field and the costate frame of one spin.
inline double psi_rate_from_field(const CostateState& c, double ux, double uy, int spin) {
    const double sign = (spin == 1) ? 1.0 : -1.0;
    const Vec3 L = 0.5 * (c.l() + sign * c.m());
    const double perp2 = L.x * L.x + L.y * L.y;
    return -(ux * L.x + uy * L.y) * L.norm() / perp2;
}

inline EulerAngles euler_angles(const CostateState& c, int spin, double psi) {
    const double sign = (spin == 1) ? 1.0 : -1.0;
    const Vec3 L = 0.5 * (c.l() + sign * c.m());
    return {std::atan2(std::hypot(L.x, L.y), L.z), std::atan2(L.y, L.x), psi};
}

struct ReconstructionResult {
    std::vector<SpinPairState> states;
    std::array<bool, 2> chart_valid{true, true};
    std::array<double, 2> min_margin{0.0, 0.0};
    bool fallback_used = false;
    std::string note;
};

inline constexpr double chart_tolerance = 1e-6;

namespace detail {

// Integral over [x1, x2] of the cubic through four nodes (2-point Gauss).
inline double cubic_segment_integral(const std::array<double, 4>& x, const std::array<double, 4>& f, double a,
                                     double b) {
    auto lagrange = [&](double t) {
        double sum = 0.0;
        for (int i = 0; i < 4; ++i) {
            double w = 1.0;
            for (int j = 0; j < 4; ++j)
                if (j != i) w *= (t - x[j]) / (x[i] - x[j]);
            sum += w * f[i];
        }
        return sum;
    };
    const double mid = 0.5 * (a + b), half = 0.5 * (b - a);
    const double g = half / std::sqrt(3.0);
    return half * (lagrange(mid - g) + lagrange(mid + g));
}

inline std::vector<double> cumulative_integral(const std::vector<double>& t, const std::vector<double>& f) {
    const std::size_t n = t.size();
    std::vector<double> out(n, 0.0);
    if (n < 2) return out;
    if (n < 4) {
        for (std::size_t k = 1; k < n; ++k) out[k] = out[k - 1] + 0.5 * (t[k] - t[k - 1]) * (f[k] + f[k - 1]);
        return out;
    }
    for (std::size_t k = 0; k + 1 < n; ++k) {
        std::size_t s = (k == 0) ? 0 : k - 1;
        if (s + 3 >= n) s = n - 4;
        const std::array<double, 4> xs{t[s], t[s + 1], t[s + 2], t[s + 3]};
        const std::array<double, 4> fs{f[s], f[s + 1], f[s + 2], f[s + 3]};
        out[k + 1] = out[k] + cubic_segment_integral(xs, fs, t[k], t[k + 1]);
    }
    return out;
}

}  // namespace detail

/// Spin trajectories along an integrated extremal, through the psi angles.
/// A spin whose chart degenerates (margin below 1e-6) is taken from a direct
/// joint integration of the Bloch equation with the same extremal field.
inline ReconstructionResult reconstruct_bloch(const ExtremalTrajectory& tr) {
    if (tr.states.empty()) throw std::invalid_argument("reconstruct_bloch: empty trajectory");
    const auto& inv = tr.invariants;
    const double omega = tr.omega;
    ReconstructionResult res;
    const std::size_t n = tr.states.size();
    std::array<std::vector<double>, 2> psi;
    for (int spin = 1; spin <= 2; ++spin) {
        double worst = std::numeric_limits<double>::infinity();
        double rmin = std::numeric_limits<double>::infinity();
        for (const auto& c : tr.states) {
            worst = std::min(worst, chart_margin(c, inv.s, spin));
            rmin = std::min(rmin, c.r());
        }
        res.min_margin[spin - 1] = worst;
        res.chart_valid[spin - 1] = worst > chart_tolerance && rmin > default_r_min;
        if (!res.chart_valid[spin - 1]) continue;
        std::vector<double> rate(n);
        for (std::size_t k = 0; k < n; ++k) rate[k] = psi_rate(tr.states[k].r(), inv, omega, spin);
        psi[spin - 1] = detail::cumulative_integral(tr.times, rate);
        for (auto& v : psi[spin - 1]) v += 0.5 * std::numbers::pi;
    }

    std::vector<SpinPairState> direct;
    if (!res.chart_valid[0] || !res.chart_valid[1]) {
        res.fallback_used = true;
        res.note = std::string("chart breakdown for spin") + (!res.chart_valid[0] ? " 1" : "") +
                   (!res.chart_valid[1] ? " 2" : "") + "; used direct integration";
        ExtremalSpinState x{tr.states.front(), SpinPairState{}};
        direct.push_back(x.spins);
        for (std::size_t k = 1; k < n; ++k) {
            x.c = tr.states[k - 1];
            x = rk4_joint_step(x, omega, tr.times[k] - tr.times[k - 1]);
            direct.push_back(x.spins);
        }
    }

    res.states.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
        const auto& c = tr.states[k];
        SpinPairState st;
        const double p1 = res.chart_valid[0] ? psi[0][k] : 0.0;
        const double p2 = res.chart_valid[1] ? psi[1][k] : 0.0;
        const SpinPairState rec = bloch_from_costates(c, inv.s, p1, p2);
        st.m1 = res.chart_valid[0] ? rec.m1 : direct[k].m1;
        st.m2 = res.chart_valid[1] ? rec.m2 : direct[k].m2;
        st.time = tr.times[k];
        res.states[k] = st;
    }
    return res;
}

}  // namespace selspin
