#include <catch_amalgamated.hpp>

#include <cmath>
#include <complex>
#include <numbers>
#include <random>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>

#include "selspin/special_functions.hpp"

using namespace selspin;
using Catch::Approx;

namespace {

// Adaptive quadrature of the defining integrals.
double quad_f(double phi, double m) {
    auto f = [m](double t) { return 1.0 / std::sqrt(1.0 - m * std::sin(t) * std::sin(t)); };
    return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, 0.0, phi, 12, 1e-14);
}

double quad_pi(double n, double phi, double m) {
    auto f = [n, m](double t) {
        const double s2 = std::sin(t) * std::sin(t);
        return 1.0 / ((1.0 - n * s2) * std::sqrt(1.0 - m * s2));
    };
    return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, 0.0, phi, 12, 1e-14);
}

double rel(double a, double b) { return std::abs(a - b) / std::max(1e-300, std::abs(b)); }

}  // namespace

TEST_CASE("first kind: trivial values", "[special][ellip_f]") {
    for (double phi : {-1.2, 0.0, 0.3, 1.0, 1.5}) CHECK(ellip_f(phi, 0.0) == Approx(phi).margin(1e-15));
    for (double m : {0.0, 0.3, 0.99}) CHECK(ellip_f(0.0, m) == 0.0);
}

TEST_CASE("first kind: complete value at m = 0.5", "[special][ellip_f]") {
    const double oracle = quad_f(std::numbers::pi / 2, 0.5);
    CHECK(rel(oracle, 1.854074677301372) < 1e-12);
    CHECK(rel(ellip_f(std::numbers::pi / 2, 0.5), oracle) < 1e-12);
    CHECK(rel(ellip_k(0.5), oracle) < 1e-12);
}

TEST_CASE("first kind: agreement with quadrature on a grid", "[special][ellip_f]") {
    for (double m : {0.0, 0.1, 0.5, 0.9, 0.999}) {
        for (double phi : {0.05, 0.4, 0.9, 1.3, 1.5707}) {
            INFO("m=" << m << " phi=" << phi);
            CHECK(rel(ellip_f(phi, m), quad_f(phi, m)) < 1e-12);
            CHECK(rel(ellip_f(-phi, m), -quad_f(phi, m)) < 1e-12);
        }
    }
}

TEST_CASE("first kind: quasi-periodic extension", "[special][ellip_f]") {
    const double m = 0.6;
    for (double phi : {0.2, 1.1}) {
        CHECK(rel(ellip_f(phi + std::numbers::pi, m), ellip_f(phi, m) + 2 * ellip_k(m)) < 1e-13);
        CHECK(rel(ellip_f(phi - 2 * std::numbers::pi, m), ellip_f(phi, m) - 4 * ellip_k(m)) < 1e-13);
    }
    CHECK(rel(ellip_f(2.5, m), quad_f(2.5, m)) < 1e-12);
}

TEST_CASE("first kind: derivative matches the integrand", "[special][ellip_f][property]") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> um(0.0, 0.95), up(-1.5, 1.5);
    for (int i = 0; i < 100; ++i) {
        const double m = um(rng), phi = up(rng), h = 1e-5;
        const double fd = (ellip_f(phi + h, m) - ellip_f(phi - h, m)) / (2 * h);
        CHECK(std::abs(fd - 1.0 / std::sqrt(1.0 - m * std::sin(phi) * std::sin(phi))) < 1e-8);
    }
}

TEST_CASE("first kind: rejects parameter outside [0, 1]", "[special][ellip_f][errors]") {
    CHECK_THROWS_AS(ellip_f(0.5, -0.1), std::domain_error);
    CHECK_THROWS_AS(ellip_f(0.5, 1.1), std::domain_error);
    CHECK_THROWS_AS(ellip_pi(0.1, 0.5, 1.5), std::domain_error);
}

TEST_CASE("third kind: trivial values and reduction", "[special][ellip_pi]") {
    for (double m : {0.0, 0.4, 0.95})
        for (double phi : {0.1, 0.8, 1.4}) CHECK(std::abs(ellip_pi(0.0, phi, m) - ellip_f(phi, m)) < 1e-12);
    CHECK(ellip_pi(0.7, 0.0, 0.3) == 0.0);
}

TEST_CASE("third kind: value at (0.3, 1.0 | 0.7)", "[special][ellip_pi]") {
    const double oracle = quad_pi(0.3, 1.0, 0.7);
    CHECK(rel(ellip_pi(0.3, 1.0, 0.7), oracle) < 1e-10);
}

TEST_CASE("third kind: agreement with quadrature for both signs of n", "[special][ellip_pi]") {
    for (double n : {-5.0, -0.8, 0.2, 0.6, 0.95}) {
        for (double m : {0.0, 0.3, 0.8}) {
            for (double phi : {0.2, 0.9, 1.4}) {
                if (1.0 - n * std::sin(phi) * std::sin(phi) <= 0.0) continue;
                INFO("n=" << n << " m=" << m << " phi=" << phi);
                CHECK(rel(ellip_pi(n, phi, m), quad_pi(n, phi, m)) < 1e-10);
            }
        }
    }
    // Extension past pi/2 for n < 1.
    CHECK(rel(ellip_pi(0.4, 2.2, 0.5), quad_pi(0.4, 2.2, 0.5)) < 1e-10);
    CHECK(rel(ellip_pi(-2.0, -2.9, 0.5), -quad_pi(-2.0, 2.9, 0.5)) < 1e-10);
}

TEST_CASE("third kind: rejects paths through the pole", "[special][ellip_pi][errors]") {
    CHECK_THROWS_AS(ellip_pi(2.0, 1.0, 0.5), std::domain_error);   // 1 - 2 sin^2(1) < 0
    CHECK_THROWS_AS(ellip_pi(1.0, 2.0, 0.5), std::domain_error);   // crosses pi/2 with n = 1
    CHECK_NOTHROW(ellip_pi(2.0, 0.5, 0.5));                        // pole not reached
}

TEST_CASE("quartic: constructed roots -2, -1, 1, 2", "[special][quartic]") {
    // -(u^2 - 1)(u^2 - 4) = -u^4 + 5u^2 - 4
    const auto q = quartic_roots(5.0, 0.0, 4.0, 1.5);
    REQUIRE(q.has_bracket);
    CHECK(q.beta1 == Approx(1.0).margin(1e-10));
    CHECK(q.beta2 == Approx(2.0).margin(1e-10));
    CHECK(q.gammas_real);
    CHECK(q.gamma1.real() == Approx(-2.0).margin(1e-10));
    CHECK(q.gamma2.real() == Approx(-1.0).margin(1e-10));
    const auto q2 = quartic_roots(5.0, 0.0, 4.0, -1.5);
    CHECK(q2.beta1 == Approx(-2.0).margin(1e-10));
    CHECK(q2.beta2 == Approx(-1.0).margin(1e-10));
}

TEST_CASE("quartic: resonant coefficients give a double root at u = 1", "[special][quartic]") {
    // omega = s = r0 = 1: A = 1, B = 2, C = 2.
    const auto q = quartic_roots(1.0, 2.0, 2.0, 1.0);
    CHECK(std::abs(q.polynomial(1.0)) < 1e-12);
    REQUIRE(q.has_bracket);
    CHECK(q.degenerate_well);
    CHECK(q.beta1 == Approx(1.0).margin(1e-7));
    CHECK(q.beta2 == Approx(1.0).margin(1e-7));
}

TEST_CASE("quartic: random physical coefficients satisfy Vieta and pairing identities",
          "[special][quartic][property]") {
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> uw(0.2, 3.0), ua(0.0, std::numbers::pi);
    int checked = 0;
    for (int i = 0; i < 300 && checked < 100; ++i) {
        const double w = uw(rng), p1 = ua(rng), p2 = ua(rng);
        const double s1 = std::sin(p1), s2 = std::sin(p2), d2 = s1 * s1 + s2 * s2;
        const double s = (s2 * s2 - s1 * s1) / d2;
        const double r0 = std::abs(std::sin(p2 - p1)) / std::sqrt(d2);
        if (std::abs(s) < 1e-3 || r0 < 1e-3) continue;
        const double k = w * w * s * s;
        const double A = (2 * w * w - r0 * r0) / k, B = 2 * r0 / k, C = (1 + w * w) / k;
        const auto q = quartic_roots(A, B, C, 1.0 / r0);
        REQUIRE(q.has_bracket);
        ++checked;
        const double scale = 1.0 + std::max({std::abs(A), std::abs(B), std::abs(C)});
        for (const auto& z : q.all) CHECK(std::abs(q.polynomial(z)) < 1e-9 * scale);
        std::complex<double> e1 = 0, e2 = 0, e4 = 1;
        for (int a = 0; a < 4; ++a) {
            e1 += q.all[a];
            e4 *= q.all[a];
            for (int b = a + 1; b < 4; ++b) e2 += q.all[a] * q.all[b];
        }
        // Monic form u^4 - A u^2 - B u + C.
        CHECK(std::abs(e1) < 1e-9 * scale);
        CHECK(std::abs(e2 + A) < 1e-9 * scale);
        CHECK(std::abs(e4 - C) < 1e-9 * scale);
        CHECK(q.beta1 <= 1.0 / r0 + 1e-9);
        CHECK(q.beta2 >= 1.0 / r0 - 1e-9);
        CHECK(std::abs(q.gamma1 * q.gamma2 - C / (q.beta1 * q.beta2)) < 1e-9 * scale);
        CHECK(std::abs(q.beta1 + q.beta2 + q.gamma1 + q.gamma2) < 1e-9 * scale);
    }
    CHECK(checked == 100);
}

TEST_CASE("quartic: scale consistency", "[special][quartic][property]") {
    // Roots of P(lambda v) / lambda^4 are roots / lambda.
    const double A = 3.0, B = 1.2, C = 0.7, lam = 2.5;
    const auto q = quartic_roots(A, B, C, 1.0);
    const auto qs = quartic_roots(A / (lam * lam), B / (lam * lam * lam), C / std::pow(lam, 4), 1.0 / lam);
    for (int i = 0; i < 4; ++i) CHECK(std::abs(qs.all[i] - q.all[i] / lam) < 1e-9);
}

TEST_CASE("quartic: non-finite coefficients are rejected", "[special][quartic][errors]") {
    CHECK_THROWS_AS(quartic_roots(std::nan(""), 1.0, 1.0), std::domain_error);
    CHECK_THROWS_AS(quartic_roots(1.0, INFINITY, 1.0), std::domain_error);
}

TEST_CASE("quartic: no real bracket", "[special][quartic]") {
    // -u^4 - 1 has no real roots.
    const auto q = quartic_roots(0.0, 0.0, 1.0, 0.0);
    CHECK_FALSE(q.has_bracket);
}
