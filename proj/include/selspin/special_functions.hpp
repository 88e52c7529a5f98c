#pragma once

// Incomplete elliptic integrals (Legendre form, computed through Carlson's
// symmetric integrals) and a quartic root solver for the radial polynomial
//
//     P(u) = -u^4 + A u^2 + B u - C.
//
// Conventions follow the parameter (not modulus) form:
//     F(phi | m)      = int_0^phi dt / sqrt(1 - m sin^2 t)
//     Pi(n; phi | m)  = int_0^phi dt / ((1 - n sin^2 t) sqrt(1 - m sin^2 t))

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

namespace selspin {

namespace carlson {

/// R_F(x, y, z); at most one argument may be zero.
inline double rf(double x, double y, double z) {
    constexpr double errtol = 0.0008;
    if (std::min({x, y, z}) < 0.0 || std::min({x + y, x + z, y + z}) <= 0.0)
        throw std::domain_error("carlson::rf: invalid arguments");
    double ave = 0.0, dx = 0.0, dy = 0.0, dz = 0.0;
    for (int it = 0; it < 200; ++it) {
        const double sx = std::sqrt(x), sy = std::sqrt(y), sz = std::sqrt(z);
        const double lambda = sx * (sy + sz) + sy * sz;
        x = 0.25 * (x + lambda);
        y = 0.25 * (y + lambda);
        z = 0.25 * (z + lambda);
        ave = (x + y + z) / 3.0;
        dx = (ave - x) / ave;
        dy = (ave - y) / ave;
        dz = (ave - z) / ave;
        if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) < errtol) break;
    }
    const double e2 = dx * dy - dz * dz;
    const double e3 = dx * dy * dz;
    return (1.0 + (e2 / 24.0 - 0.1 - 3.0 * e3 / 44.0) * e2 + e3 / 14.0) / std::sqrt(ave);
}

/// R_C(x, y) for y > 0.
inline double rc(double x, double y) {
    constexpr double errtol = 0.0008;
    if (x < 0.0 || y <= 0.0) throw std::domain_error("carlson::rc: invalid arguments");
    double ave = 0.0, s = 0.0;
    for (int it = 0; it < 200; ++it) {
        const double lambda = 2.0 * std::sqrt(x) * std::sqrt(y) + y;
        x = 0.25 * (x + lambda);
        y = 0.25 * (y + lambda);
        ave = (x + y + y) / 3.0;
        s = (y - ave) / ave;
        if (std::abs(s) < errtol) break;
    }
    return (1.0 + s * s * (0.3 + s * (1.0 / 7.0 + s * (0.375 + s * 9.0 / 22.0)))) / std::sqrt(ave);
}

/// R_J(x, y, z, p) for p > 0 (the principal-value case is not supported).
inline double rj(double x, double y, double z, double p) {
    constexpr double errtol = 0.0008;
    if (std::min({x, y, z}) < 0.0 || std::min({x + y, x + z, y + z}) <= 0.0 || p <= 0.0)
        throw std::domain_error("carlson::rj: invalid arguments");
    double sum = 0.0, fac = 1.0;
    double ave = 0.0, dx = 0.0, dy = 0.0, dz = 0.0, dp = 0.0;
    for (int it = 0; it < 200; ++it) {
        const double sx = std::sqrt(x), sy = std::sqrt(y), sz = std::sqrt(z);
        const double lambda = sx * (sy + sz) + sy * sz;
        const double alpha = std::pow(p * (sx + sy + sz) + sx * sy * sz, 2);
        const double beta = p * std::pow(p + lambda, 2);
        sum += fac * rc(alpha, beta);
        fac *= 0.25;
        x = 0.25 * (x + lambda);
        y = 0.25 * (y + lambda);
        z = 0.25 * (z + lambda);
        p = 0.25 * (p + lambda);
        ave = 0.2 * (x + y + z + p + p);
        dx = (ave - x) / ave;
        dy = (ave - y) / ave;
        dz = (ave - z) / ave;
        dp = (ave - p) / ave;
        if (std::max({std::abs(dx), std::abs(dy), std::abs(dz), std::abs(dp)}) < errtol) break;
    }
    const double ea = dx * (dy + dz) + dy * dz;
    const double eb = dx * dy * dz;
    const double ec = dp * dp;
    const double ed = ea - 3.0 * ec;
    const double ee = eb + 2.0 * dp * (ea - ec);
    const double c1 = 3.0 / 14.0, c2 = 1.0 / 3.0, c3 = 3.0 / 22.0, c4 = 3.0 / 26.0;
    const double c5 = 0.75 * c3, c6 = 1.5 * c4, c7 = 0.5 * c2, c8 = c3 + c3;
    const double value =
        3.0 * sum +
        fac * (1.0 + ed * (-c1 + c5 * ed - c6 * ee) + eb * (c7 + dp * (-c8 + dp * c4)) +
               dp * ea * (c2 - dp * c3) - c2 * dp * ec) /
            (ave * std::sqrt(ave));
    return value;
}

}  // namespace carlson

namespace detail {

inline void check_parameter(double m, const char* who) {
    if (!(m >= 0.0 && m <= 1.0))
        throw std::domain_error(std::string(who) + ": parameter m must lie in [0, 1]");
}

// Splits phi = j*pi + rest with rest in [-pi/2, pi/2].
inline std::pair<double, double> reduce_amplitude(double phi) {
    const double j = std::round(phi / std::numbers::pi);
    return {j, phi - j * std::numbers::pi};
}

}  // namespace detail

/// Complete integral K(m) = F(pi/2 | m).
inline double ellip_k(double m) {
    detail::check_parameter(m, "ellip_k");
    if (m == 1.0) return std::numeric_limits<double>::infinity();
    return carlson::rf(0.0, 1.0 - m, 1.0);
}

/// Incomplete integral of the first kind F(phi | m), extended to any real
/// phi through F(phi + j pi) = F(phi) + 2 j K(m).
inline double ellip_f(double phi, double m) {
    detail::check_parameter(m, "ellip_f");
    const auto [j, rest] = detail::reduce_amplitude(phi);
    const double s = std::sin(rest);
    const double c = std::cos(rest);
    double base = 0.0;
    if (s != 0.0) {
        const double y = 1.0 - m * s * s;
        if (c == 0.0 && y == 0.0) return std::copysign(std::numeric_limits<double>::infinity(), phi);
        base = s * carlson::rf(c * c, y, 1.0);
    }
    if (j == 0.0) return base;
    return base + 2.0 * j * ellip_k(m);
}

/// Complete integral of the third kind Pi(n | m), n < 1.
inline double ellip_pi_complete(double n, double m) {
    detail::check_parameter(m, "ellip_pi");
    if (n >= 1.0) throw std::domain_error("ellip_pi: complete integral needs n < 1");
    if (m == 1.0) return std::numeric_limits<double>::infinity();
    return carlson::rf(0.0, 1.0 - m, 1.0) + n / 3.0 * carlson::rj(0.0, 1.0 - m, 1.0, 1.0 - n);
}

/// Incomplete integral of the third kind Pi(n; phi | m).
///
/// Throws std::domain_error when 1 - n sin^2 t vanishes or changes sign on
/// [0, phi]: the Cauchy principal value is not supported.
inline double ellip_pi(double n, double phi, double m) {
    detail::check_parameter(m, "ellip_pi");
    const auto [j, rest] = detail::reduce_amplitude(phi);
    const double s = std::sin(rest);
    const double c = std::cos(rest);
    // The largest sin^2 reached on the path is 1 when |phi| >= pi/2.
    const double s2max = (j != 0.0) ? 1.0 : s * s;
    if (1.0 - n * s2max <= 0.0)
        throw std::domain_error("ellip_pi: path crosses the pole of 1 - n sin^2 (principal value unsupported)");
    double base = 0.0;
    if (s != 0.0) {
        const double y = 1.0 - m * s * s;
        if (c == 0.0 && y == 0.0) return std::copysign(std::numeric_limits<double>::infinity(), phi);
        base = s * carlson::rf(c * c, y, 1.0) +
               n / 3.0 * s * s * s * carlson::rj(c * c, y, 1.0, 1.0 - n * s * s);
    }
    if (j == 0.0) return base;
    return base + 2.0 * j * ellip_pi_complete(n, m);
}

// ---------------------------------------------------------------------------
// Quartic roots of P(u) = -u^4 + A u^2 + B u - C.

struct QuarticRoots {
    double a = 0.0, b = 0.0, c = 0.0;            // coefficients A, B, C
    std::array<std::complex<double>, 4> all{};   // every root, sorted by (real, imag)
    double beta1 = 0.0, beta2 = 0.0;             // bracketing real pair, beta1 < beta2
    std::complex<double> gamma1{}, gamma2{};     // remaining pair
    bool gammas_real = false;
    bool has_bracket = false;
    bool degenerate_well = false;                // |beta2 - beta1| < 1e-7 (1 + |beta2|)

    [[nodiscard]] double polynomial(double u) const { return -u * u * u * u + a * u * u + b * u - c; }
    [[nodiscard]] std::complex<double> polynomial(std::complex<double> u) const {
        return -u * u * u * u + a * u * u + b * u - c;
    }
};

namespace detail {

inline std::complex<double> monic_quartic(std::complex<double> u, double a, double b, double c) {
    return (((u * u) - a) * u - b) * u + c;
}
inline std::complex<double> monic_quartic_derivative(std::complex<double> u, double a, double b) {
    return (4.0 * u * u - 2.0 * a) * u - b;
}

}  // namespace detail

/// Roots of -u^4 + A u^2 + B u - C.
///
/// The beta pair is the pair of real roots bracketing `u_hint` (ties broken
/// by the narrowest bracket). Without a hint, the rightmost interval where
/// P > 0 is chosen.
inline QuarticRoots quartic_roots(double a, double b, double c,
                                  double u_hint = std::numeric_limits<double>::quiet_NaN()) {
    if (!std::isfinite(a) || !std::isfinite(b) || !std::isfinite(c))
        throw std::domain_error("quartic_roots: non-finite coefficient");

    // Companion matrix of u^4 + 0 u^3 - A u^2 - B u + C.
    Eigen::Matrix4d companion = Eigen::Matrix4d::Zero();
    companion(1, 0) = 1.0;
    companion(2, 1) = 1.0;
    companion(3, 2) = 1.0;
    companion(0, 3) = -c;
    companion(1, 3) = b;
    companion(2, 3) = a;
    companion(3, 3) = 0.0;
    Eigen::EigenSolver<Eigen::Matrix4d> solver(companion, false);
    if (solver.info() != Eigen::Success) throw std::runtime_error("quartic_roots: eigenvalue solver failed");

    QuarticRoots out;
    out.a = a;
    out.b = b;
    out.c = c;
    const double scale = 1.0 + std::max({std::abs(a), std::abs(b), std::abs(c)});
    for (int i = 0; i < 4; ++i) {
        std::complex<double> z = solver.eigenvalues()(i);
        for (int k = 0; k < 2; ++k) {
            const auto d = detail::monic_quartic_derivative(z, a, b);
            if (std::abs(d) < 1e-14 * scale) break;
            const auto next = z - detail::monic_quartic(z, a, b, c) / d;
            if (std::abs(detail::monic_quartic(next, a, b, c)) <= std::abs(detail::monic_quartic(z, a, b, c)))
                z = next;
        }
        out.all[i] = z;
    }
    std::sort(out.all.begin(), out.all.end(), [](auto l, auto r) {
        return l.real() < r.real() || (l.real() == r.real() && l.imag() < r.imag());
    });

    // Real-root classification relative to the root magnitude.
    std::vector<double> reals;
    std::vector<int> real_index;
    for (int i = 0; i < 4; ++i) {
        const auto z = out.all[i];
        if (std::abs(z.imag()) <= 1e-7 * (1.0 + std::abs(z.real()))) {
            reals.push_back(z.real());
            real_index.push_back(i);
        }
    }

    int best_i = -1, best_j = -1;
    double best_width = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i + 1 < reals.size(); ++i) {
        // P is negative far away, so allowed intervals are (r0, r1) and (r2, r3).
        if (i % 2 != 0 && reals.size() == 4) continue;
        const double lo = reals[i], hi = reals[i + 1];
        const double width = hi - lo;
        bool ok;
        if (std::isnan(u_hint)) {
            ok = true;
        } else {
            const double slack = 1e-9 * (1.0 + std::abs(u_hint));
            ok = (u_hint >= lo - slack && u_hint <= hi + slack);
        }
        if (!ok) continue;
        if (std::isnan(u_hint)) {
            if (best_i < 0 || lo > reals[best_i]) best_i = static_cast<int>(i), best_j = static_cast<int>(i + 1), best_width = width;
        } else if (width < best_width) {
            best_i = static_cast<int>(i);
            best_j = static_cast<int>(i + 1);
            best_width = width;
        }
    }
    if (best_i < 0) return out;

    out.has_bracket = true;
    out.beta1 = reals[best_i];
    out.beta2 = reals[best_j];
    std::vector<std::complex<double>> rest;
    for (int i = 0; i < 4; ++i)
        if (i != real_index[best_i] && i != real_index[best_j]) rest.push_back(out.all[i]);
    out.gamma1 = rest[0];
    out.gamma2 = rest[1];
    out.gammas_real = std::abs(rest[0].imag()) <= 1e-7 * (1.0 + std::abs(rest[0].real())) &&
                      std::abs(rest[1].imag()) <= 1e-7 * (1.0 + std::abs(rest[1].real()));
    if (out.gammas_real) {
        out.gamma1 = out.gamma1.real();
        out.gamma2 = out.gamma2.real();
    }
    // A double root splits by about sqrt(eps) under rounding.
    out.degenerate_well = std::abs(out.beta2 - out.beta1) < 1e-7 * (1.0 + std::abs(out.beta2));
    return out;
}

}  // namespace selspin
