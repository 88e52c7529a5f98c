#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <random>

#include "selspin/pmp_extremal.hpp"

using namespace selspin;
using std::numbers::pi;

namespace {

// Times where dr/dt changes sign, located by linear interpolation.
std::vector<double> radial_turns(const ExtremalTrajectory& tr) {
    std::vector<double> out;
    double prev = radial_velocity(tr.states[0], tr.omega);
    for (std::size_t k = 1; k < tr.states.size(); ++k) {
        const double v = radial_velocity(tr.states[k], tr.omega);
        if ((prev < 0.0 && v >= 0.0) || (prev > 0.0 && v <= 0.0)) {
            const double w = prev / (prev - v);
            out.push_back(tr.times[k - 1] + w * (tr.times[k] - tr.times[k - 1]));
        }
        prev = v;
    }
    return out;
}

ExtremalParams random_params(std::mt19937_64& rng, double wlo = 0.2, double whi = 3.0) {
    std::uniform_real_distribution<double> uw(wlo, whi), ua(0.0, pi);
    ExtremalParams p;
    p.omega = uw(rng);
    p.phi1 = ua(rng);
    p.phi2 = ua(rng);
    return p;
}

}  // namespace

TEST_CASE("initial costates at (0, pi/2)", "[extremal]") {
    const auto init = initial_costates({0.7, 0.0, pi / 2});
    REQUIRE_FALSE(init.degenerate);
    CHECK(std::abs(init.l1.x - 1.0) < 1e-15);
    CHECK(init.l2.norm() < 1e-15);
    const auto& c = init.state;
    CHECK(std::abs(c.lx - 1.0) < 1e-15);
    CHECK(std::abs(c.mx - 1.0) < 1e-15);
    CHECK(std::abs(c.ly) + std::abs(c.my) + std::abs(c.lz) + std::abs(c.mz) < 1e-15);
    const auto inv = invariants_of_state(c, 0.7);
    CHECK(inv.s == Catch::Approx(1.0).margin(1e-15));
    CHECK(inv.r0 == Catch::Approx(1.0).margin(1e-15));
}

TEST_CASE("initial costates: normalization and phase convention", "[extremal][property]") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> ua(0.0, 2 * pi);
    for (int i = 0; i < 500; ++i) {
        const ExtremalParams p{1.0, ua(rng), ua(rng)};
        const auto init = initial_costates(p);
        if (init.degenerate) continue;
        CHECK(std::abs(init.state.ly) < 1e-12);
        CHECK(init.state.lz == 0.0);
        CHECK(init.state.mz == 0.0);
        CHECK(std::abs(init.l1.dot(init.l1) + init.l2.dot(init.l2) - 1.0) < 1e-12);
        // Each costate lies along its angle.
        CHECK(std::abs(init.l1.cross({std::cos(p.phi1), std::sin(p.phi1), 0}).norm()) < 1e-12);
        CHECK(std::abs(init.l2.cross({std::cos(p.phi2), std::sin(p.phi2), 0}).norm()) < 1e-12);
    }
}

TEST_CASE("initial costates: degenerate angle pairs are flagged", "[extremal][errors]") {
    CHECK(initial_costates({1.0, 0.0, 0.0}).degenerate);
    CHECK(initial_costates({1.0, pi, 0.0}).degenerate);
    CHECK(initial_costates({1.0, 0.4, 0.4}).degenerate);           // r(0) = 0
    CHECK(initial_costates({1.0, 0.4, 0.4 + pi}).degenerate);
    CHECK_FALSE(initial_costates({1.0, pi / 2, 0.0}).degenerate);  // sin(phi2) = 0 alone is fine
    CHECK_THROWS_AS(integrate_extremal({1.0, 0.4, 0.4}, 1.0, 0.01), std::invalid_argument);
}

TEST_CASE("invariants from angles", "[extremal]") {
    const auto a = invariants_from_angles({1.0, 0.0, pi / 2});
    CHECK(a.s == Catch::Approx(1.0).margin(1e-15));
    CHECK(a.r0 == Catch::Approx(1.0).margin(1e-15));
    CHECK(a.energy == Catch::Approx(0.5).margin(1e-15));
    for (double x : {0.1, 0.9, 2.0}) CHECK(invariants_from_angles({1.0, x, x}).s == 0.0);
    const auto b = invariants_from_angles({1.0, 0.1886 * pi, 0.7548 * pi});
    CHECK(b.s == Catch::Approx(0.2172).margin(5e-5));
    CHECK(b.r0 == Catch::Approx(1.0961).margin(1e-4));
}

TEST_CASE("invariants from angles agree with the initial costates", "[extremal][property]") {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> ua(0.0, 2 * pi), uw(0.0, 3.0);
    for (int i = 0; i < 1000; ++i) {
        const ExtremalParams p{uw(rng), ua(rng), ua(rng)};
        const auto init = initial_costates(p);
        if (init.degenerate) continue;
        const auto f = invariants_from_angles(p);
        const auto g = invariants_of_state(init.state, p.omega);
        CHECK(std::abs(f.s - g.s) < 1e-10);
        CHECK(std::abs(f.r0 - g.r0) < 1e-10);
        CHECK(f.r0 <= std::sqrt(2.0));
        const auto h = invariants_from_angles({p.omega, p.phi1 + pi, p.phi2 + pi});
        CHECK(std::abs(h.s - f.s) < 1e-13);
        CHECK(std::abs(h.r0 - f.r0) < 1e-13);
    }
}

TEST_CASE("reduced flow conserves the invariants to first order", "[extremal][property]") {
    std::mt19937_64 rng(6);
    std::normal_distribution<double> g;
    std::uniform_real_distribution<double> uw(0.1, 3.0);
    for (int i = 0; i < 100; ++i) {
        const double w = uw(rng);
        CostateState c{g(rng), g(rng), 0.0, g(rng), g(rng), g(rng)};
        const CostateState f = extremal_rhs(c, w);
        CHECK(f.lz == Catch::Approx(0.0).margin(1e-14));
        const double eps = 1e-6;
        const CostateState a = c + eps * f, b = c + (-eps) * f;
        CHECK(std::abs((a.r0(w) - b.r0(w)) / (2 * eps)) < 1e-6);
        CHECK(std::abs((a.s() - b.s()) / (2 * eps)) < 1e-6);
        CHECK(std::abs((a.norm_sum() - b.norm_sum()) / (2 * eps)) < 1e-6);
        // dr/dt from the field-independent formula.
        CHECK(std::abs((a.r() - b.r()) / (2 * eps) - radial_velocity(c, w)) < 1e-6);
    }
}

TEST_CASE("reduced flow: l = (r, 0, 0) with my = 0 gives no change of lx", "[extremal]") {
    const CostateState c{0.8, 0.0, 0.0, 0.3, 0.0, 0.5};
    CHECK(extremal_rhs(c, 1.3).lx == 0.0);
}

TEST_CASE("reduced flow signals the singular set", "[extremal][errors]") {
    const CostateState c{1e-12, 0.0, 0.0, 0.0, 0.0, 1.0};
    CHECK_THROWS_AS(extremal_rhs(c, 1.0), SingularSetError);
    CHECK(regular_field(c).ux == 0.0);
}

TEST_CASE("resonant extremal is the circular field", "[extremal]") {
    for (double w : {0.3, 1.0, std::sqrt(15.0) / 2}) {
        const auto tr = integrate_extremal({w, 0.0, pi / 2}, 3.0, 1e-3);
        REQUIRE_FALSE(tr.singular_hit);
        double worst = 0.0;
        for (std::size_t k = 0; k < tr.times.size(); ++k) {
            const double t = tr.times[k];
            worst = std::max({worst, std::abs(tr.controls[k].ux - std::cos(w * t)),
                              std::abs(tr.controls[k].uy - std::sin(w * t)), std::abs(tr.states[k].r() - 1.0)});
        }
        CHECK(worst < 1e-10);
        CHECK(kepler_residual(tr) < 1e-6);
    }
}

TEST_CASE("s = 0 with E < 0 keeps a constant phase", "[extremal]") {
    // phi1 = -phi2 gives s = 0; pick r0 above omega sqrt 2.
    const double w = 0.3;
    const ExtremalParams p{w, pi - 1.2, 1.2};
    const auto inv = invariants_from_angles(p);
    REQUIRE(std::abs(inv.s) < 1e-14);
    REQUIRE(inv.energy < 0.0);
    const auto tr = integrate_extremal(p, 4 * pi, 1e-3);
    REQUIRE_FALSE(tr.singular_hit);
    for (double a : tr.alpha) CHECK(std::abs(a - tr.alpha.front()) < 1e-10);
    CHECK(kepler_residual(tr) < 1e-8);
}

TEST_CASE("integrated extremals conserve the invariants", "[extremal][property]") {
    std::mt19937_64 rng(77);
    int done = 0;
    for (int i = 0; i < 40; ++i) {
        const auto p = random_params(rng);
        if (initial_costates(p).degenerate) continue;
        const auto tr = integrate_extremal(p, 4 * pi, 1e-4);
        if (tr.singular_hit) continue;
        ++done;
        INFO("omega=" << p.omega << " phi1=" << p.phi1 << " phi2=" << p.phi2);
        CHECK(tr.drift.r0 < 1e-8);
        CHECK(tr.drift.s < 1e-8);
        CHECK(tr.drift.norm < 1e-8);
        CHECK(tr.drift.lz < 1e-12);
        CHECK(kepler_residual(tr) < 1e-5);
        for (const auto& u : tr.controls) CHECK(std::abs(std::hypot(u.ux, u.uy) - 1.0) < 1e-12);
    }
    CHECK(done >= 35);
}

TEST_CASE("potential: values and equilibria", "[extremal][potential]") {
    const double w = 0.8;
    CHECK(pseudo_energy(w, w * std::sqrt(2.0)) == Catch::Approx(0.0).margin(1e-15));
    const auto pot = potential({1.0, 1.0, 0.0}, w);
    CHECK(pot(1.0) == Catch::Approx(pot.energy).margin(1e-14));
    CHECK(pot.energy == Catch::Approx(w * w - 0.5).margin(1e-15));
    // Repulsive core for s != 0.
    const auto rep = potential({0.3, 0.9, 0.0}, w);
    CHECK(rep(1e-4) > 1e4);
    const auto [ra, rb] = rep.turning_points();
    CHECK(std::abs(rep(ra) - rep.energy) < 1e-10);
    CHECK(std::abs(rep(rb) - rep.energy) < 1e-10);
    CHECK(ra <= 0.9);
    CHECK(rb >= 0.9);
}

TEST_CASE("potential: pseudo-energy is conserved along the flow", "[extremal][potential][property]") {
    std::mt19937_64 rng(12);
    for (int i = 0; i < 10; ++i) {
        const auto p = random_params(rng);
        if (initial_costates(p).degenerate) continue;
        const auto tr = integrate_extremal(p, 2 * pi, 1e-4);
        if (tr.singular_hit) continue;
        const auto pot = potential(tr.invariants, p.omega);
        double worst = 0.0, worst_exact = 0.0;
        // Five-point centered differences on the uniform part of the grid. Close
        // approaches (r below 0.05 on near-zero s) bounce too sharply for any
        // difference stencil, so there only the analytic dr/dt is used.
        const double h = 1e-4;
        auto r_at = [&](std::size_t j) { return tr.states[j].r(); };
        for (std::size_t k = 2; k + 3 < tr.states.size(); k += 7) {
            const double r = r_at(k);
            const double v = radial_velocity(tr.states[k], p.omega);
            worst_exact = std::max(worst_exact, std::abs(0.5 * v * v + pot(r) - pot.energy));
            if (std::min({r_at(k - 2), r, r_at(k + 2)}) < 0.05) continue;
            const double rd = (r_at(k - 2) - 8 * r_at(k - 1) + 8 * r_at(k + 1) - r_at(k + 2)) / (12 * h);
            worst = std::max(worst, std::abs(0.5 * rd * rd + pot(r) - pot.energy));
        }
        CHECK(worst_exact < 1e-8);
        CHECK(worst < 1e-7);
    }
}

TEST_CASE("radius quadrature inverts the integrated radius", "[extremal][quadrature]") {
    std::mt19937_64 rng(21);
    int done = 0;
    for (int i = 0; i < 30 && done < 12; ++i) {
        const auto p = random_params(rng, 0.3, 2.5);
        const auto init = initial_costates(p);
        if (init.degenerate) continue;
        const auto inv = invariants_of_state(init.state, p.omega);
        if (is_zero_s(inv.s)) continue;
        const auto [ra, rb] = potential(inv, p.omega).turning_points();
        if (rb - ra < 1e-3) continue;
        const auto tr = integrate_extremal(p, 8.0, 1e-4);
        if (tr.singular_hit) continue;
        const auto turns = radial_turns(tr);
        if (turns.empty()) continue;
        ++done;
        INFO("omega=" << p.omega << " phi1=" << p.phi1 << " phi2=" << p.phi2);
        CHECK(radius_quadrature(inv, p.omega, inv.r0) == 0.0);
        // Monotone stretch up to the first turning point.
        double prev = 0.0;
        for (std::size_t k = 1; k < tr.times.size() && tr.times[k] < turns[0]; k += 97) {
            const double t = radius_quadrature(inv, p.omega, tr.states[k].r());
            CHECK(std::abs(t - tr.times[k]) < 1e-6);
            CHECK(t >= prev);
            prev = t;
        }
        const bool inward = tr.states[1].r() < tr.states[0].r();
        CHECK(std::abs(radius_quadrature(inv, p.omega, inward ? ra : rb) - turns[0]) < 1e-6);
    }
    CHECK(done >= 8);
}

TEST_CASE("radial period matches the integrated period", "[extremal][quadrature]") {
    std::mt19937_64 rng(99);
    int done = 0;
    for (int i = 0; i < 30 && done < 8; ++i) {
        const auto p = random_params(rng, 0.3, 2.5);
        const auto init = initial_costates(p);
        if (init.degenerate) continue;
        const auto inv = invariants_of_state(init.state, p.omega);
        if (is_zero_s(inv.s)) continue;
        const auto [ra, rb] = potential(inv, p.omega).turning_points();
        if (rb - ra < 1e-2) continue;
        const double T = radial_period(inv, p.omega);
        if (T > 10.0) continue;
        const auto tr = integrate_extremal(p, 2.5 * T, 1e-4);
        const auto turns = radial_turns(tr);
        REQUIRE(turns.size() >= 3);
        ++done;
        CHECK(std::abs((turns[2] - turns[0]) - T) < 1e-5);
    }
    CHECK(done >= 5);
}

TEST_CASE("radius quadrature rejects radii outside the well", "[extremal][quadrature][errors]") {
    const InvariantSet inv{0.3, 0.9, pseudo_energy(1.0, 0.9)};
    const auto [ra, rb] = potential(inv, 1.0).turning_points();
    CHECK_THROWS_AS(radius_quadrature(inv, 1.0, rb + 0.1), std::domain_error);
    CHECK_THROWS_AS(radius_quadrature(inv, 1.0, 0.5 * ra), std::domain_error);
}
