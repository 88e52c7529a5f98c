#pragma once

// Piecewise-constant pulse optimization by projected gradient descent. Each
// segment is an exact rotation; its derivative with respect to the field
// comes from the closed form of the derivative of the rotation exponential,
// so the gradient is exact up to rounding.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <limits>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "selspin/parallel.hpp"
#include "selspin/spin_core.hpp"

namespace selspin {

struct GrapeProblem {
    double omega = 1.0;
    TransferTarget target = TransferTarget::SelectiveExcitation;
    double t_final = 1.0;
    int n_segments = 64;
    int max_iterations = 1500;
    int restarts = 20;
    std::uint64_t seed = 1;
    double j_threshold = 1e-3;  // success flag only; the descent runs to j_stop
    double j_stop = 1e-14;
    int workers = 0;
};

using GrapeControls = std::vector<Control>;

struct GrapeResult {
    PiecewisePulse pulse;
    GrapeControls controls;
    double j_final = 0.0;
    int iterations = 0;
    double gradient_norm = 0.0;  // projected gradient at exit
    int restart_index = -1;
    bool reached = false;        // j_final < j_threshold
    std::vector<double> j_history;  // J after each accepted step, starting from the initial J
};

inline void validate(const GrapeProblem& p) {
    if (p.n_segments < 8) throw std::invalid_argument("GRAPE: n_segments must be at least 8");
    if (!(p.t_final > 0.0)) throw std::invalid_argument("GRAPE: t_final must be positive");
    if (!(p.omega > 0.0) || !std::isfinite(p.omega)) throw std::invalid_argument("GRAPE: omega must be positive");
    if (p.restarts < 1 || p.max_iterations < 0) throw std::invalid_argument("GRAPE: bad restart or iteration count");
}

inline PiecewisePulse to_pulse(const GrapeProblem& p, const GrapeControls& u) {
    std::vector<Segment> segs;
    segs.reserve(u.size());
    const double dt = p.t_final / static_cast<double>(u.size());
    for (const auto& c : u) segs.push_back({dt, c.ux, c.uy});
    return PiecewisePulse(segs);
}

/// Controls of a pulse made of n_segments equal segments.
inline GrapeControls controls_of(const GrapeProblem& p, const PiecewisePulse& pulse) {
    const auto& segs = pulse.segments();
    if (static_cast<int>(segs.size()) != p.n_segments)
        throw std::invalid_argument("GRAPE: pulse must have n_segments segments");
    const double dt = p.t_final / p.n_segments;
    GrapeControls u;
    for (const auto& s : segs) {
        if (std::abs(s.dt - dt) > 1e-12 * std::max(1.0, dt))
            throw std::invalid_argument("GRAPE: pulse segments must have equal duration t_final / n_segments");
        u.push_back({s.ux, s.uy});
    }
    return u;
}

/// Radial projection onto the unit disk.
inline Control project_disk(Control c) {
    const double a = std::hypot(c.ux, c.uy);
    if (a > 1.0) return {c.ux / a, c.uy / a};
    return c;
}

inline double grape_cost(const GrapeProblem& p, const GrapeControls& u) {
    SpinPairState s;
    const double dt = p.t_final / static_cast<double>(u.size());
    for (const auto& c : u) {
        s.m1 = rotate_about_field(s.m1, {c.ux, c.uy, -p.omega}, dt);
        s.m2 = rotate_about_field(s.m2, {c.ux, c.uy, p.omega}, dt);
    }
    return figure_of_merit(s, p.target);
}

/// Final z components and their derivatives with respect to every segment control.
struct ZGradient {
    double z1 = 1.0, z2 = 1.0;
    GrapeControls dz1, dz2;  // (dz/dux, dz/duy) per segment
};

namespace detail {

// d(R m)/dn_j for R = exp(-dt [n]x), with p = R m and j in {x, y}:
// with v = -dt n, dR/dv_j = (v_j [v]x + [v x (I - R) e_j]x) R / |v|^2.
inline Vec3 rotation_derivative(const Vec3& n, double dt, const Vec3& p, int j) {
    const Vec3 v = -dt * n;
    const double vv = v.dot(v);
    const Vec3 ej = j == 0 ? Vec3{1, 0, 0} : Vec3{0, 1, 0};
    const Vec3 w = ej - rotate_about_field(ej, n, dt);
    const Vec3 dRp = (1.0 / vv) * ((j == 0 ? v.x : v.y) * v.cross(p) + v.cross(w).cross(p));
    return -dt * dRp;
}

inline Vec3 offset_field(const Control& c, double offset) { return {c.ux, c.uy, offset}; }

}  // namespace detail

inline ZGradient z_gradient(const GrapeProblem& p, const GrapeControls& u) {
    const std::size_t n = u.size();
    const double dt = p.t_final / static_cast<double>(n);
    const double off[2] = {-p.omega, p.omega};
    std::vector<Vec3> fwd[2];
    for (int i = 0; i < 2; ++i) {
        fwd[i].resize(n + 1);
        fwd[i][0] = north_pole;
        for (std::size_t k = 0; k < n; ++k)
            fwd[i][k + 1] = rotate_about_field(fwd[i][k], detail::offset_field(u[k], off[i]), dt);
    }
    ZGradient g;
    g.z1 = fwd[0][n].z;
    g.z2 = fwd[1][n].z;
    g.dz1.resize(n);
    g.dz2.resize(n);
    for (int i = 0; i < 2; ++i) {
        Vec3 lam{0, 0, 1};  // d z / d M_n
        auto& out = i == 0 ? g.dz1 : g.dz2;
        for (std::size_t k = n; k-- > 0;) {
            const Vec3 nf = detail::offset_field(u[k], off[i]);
            out[k] = {lam.dot(detail::rotation_derivative(nf, dt, fwd[i][k + 1], 0)),
                      lam.dot(detail::rotation_derivative(nf, dt, fwd[i][k + 1], 1))};
            lam = rotate_about_field(lam, nf, -dt);  // R^T lam
        }
    }
    return g;
}

/// dJ/du per segment, with J.
inline std::pair<double, GrapeControls> cost_and_gradient(const GrapeProblem& p, const GrapeControls& u) {
    const auto zg = z_gradient(p, u);
    const double a = p.target == TransferTarget::SelectiveExcitation ? zg.z1 : 1.0 + zg.z1;
    const double b = 1.0 - zg.z2;
    const double j = a * a + b * b;
    GrapeControls g(u.size());
    for (std::size_t k = 0; k < u.size(); ++k)
        g[k] = {2.0 * a * zg.dz1[k].ux - 2.0 * b * zg.dz2[k].ux, 2.0 * a * zg.dz1[k].uy - 2.0 * b * zg.dz2[k].uy};
    return {j, g};
}

inline GrapeControls gradient(const GrapeProblem& p, const PiecewisePulse& pulse) {
    return cost_and_gradient(p, controls_of(p, pulse)).second;
}

namespace detail {

inline double dot(const GrapeControls& a, const GrapeControls& b) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) s += a[k].ux * b[k].ux + a[k].uy * b[k].uy;
    return s;
}

inline GrapeControls projected_step(const GrapeControls& u, const GrapeControls& g, double alpha) {
    GrapeControls out(u.size());
    for (std::size_t k = 0; k < u.size(); ++k) out[k] = project_disk({u[k].ux - alpha * g[k].ux, u[k].uy - alpha * g[k].uy});
    return out;
}

inline GrapeControls diff(const GrapeControls& a, const GrapeControls& b) {
    GrapeControls out(a.size());
    for (std::size_t k = 0; k < a.size(); ++k) out[k] = {a[k].ux - b[k].ux, a[k].uy - b[k].uy};
    return out;
}

inline double projected_gradient_norm(const GrapeControls& u, const GrapeControls& g) {
    const auto d = diff(projected_step(u, g, 1.0), u);
    return std::sqrt(dot(d, d));
}

}  // namespace detail

/// Projected gradient descent from u0: Barzilai-Borwein trial step, Armijo
/// backtracking along the projection arc. Accepted steps never increase J.
inline GrapeResult optimize_from(const GrapeProblem& p, GrapeControls u) {
    validate(p);
    if (static_cast<int>(u.size()) != p.n_segments) throw std::invalid_argument("GRAPE: wrong initial control count");
    for (auto& c : u) c = project_disk(c);
    auto [j, g] = cost_and_gradient(p, u);
    double alpha = 1.0;
    int it = 0;
    std::vector<double> history{j};
    for (; it < p.max_iterations; ++it) {
        if (j < p.j_stop || detail::projected_gradient_norm(u, g) < 1e-13) break;
        bool accepted = false;
        GrapeControls un;
        double jn = j;
        for (int ls = 0; ls < 50; ++ls) {
            un = detail::projected_step(u, g, alpha);
            const auto d = detail::diff(un, u);
            jn = grape_cost(p, un);
            if (jn <= j + 1e-4 * detail::dot(g, d)) {
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if (!accepted) break;
        auto [jn2, gn] = cost_and_gradient(p, un);
        const auto s = detail::diff(un, u);
        const auto y = detail::diff(gn, g);
        const double sy = detail::dot(s, y);
        alpha = sy > 0.0 ? std::clamp(detail::dot(s, s) / sy, 1e-8, 1e4) : std::min(2.0 * alpha, 1e4);
        u = std::move(un);
        j = jn2;
        g = std::move(gn);
        history.push_back(j);
    }
    GrapeResult r;
    r.controls = u;
    r.pulse = to_pulse(p, u);
    r.j_final = j;
    r.iterations = it;
    r.gradient_norm = detail::projected_gradient_norm(u, g);
    r.reached = j < p.j_threshold;
    r.j_history = std::move(history);
    return r;
}

/// Field rotating at the offset, sampled at segment midpoints: the resonant
/// pulse for spin 1.
inline GrapeControls resonant_controls(const GrapeProblem& p) {
    GrapeControls u(static_cast<std::size_t>(p.n_segments));
    const double dt = p.t_final / p.n_segments;
    for (int k = 0; k < p.n_segments; ++k) {
        const double t = (k + 0.5) * dt;
        u[k] = {std::cos(p.omega * t), std::sin(p.omega * t)};
    }
    return u;
}

/// Restart k's initial controls: k = 0 is the resonant pulse, the others are
/// uniform in the unit disk from mt19937_64(seed + k).
inline GrapeControls initial_controls(const GrapeProblem& p, int k) {
    if (k == 0) return resonant_controls(p);
    std::mt19937_64 rng(p.seed + static_cast<std::uint64_t>(k));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    GrapeControls u(static_cast<std::size_t>(p.n_segments));
    for (auto& c : u) {
        const double r = std::sqrt(unit(rng)), a = 2.0 * std::numbers::pi * unit(rng);
        c = {r * std::cos(a), r * std::sin(a)};
    }
    return u;
}

/// Best over restarts (ties go to the lower index). Restarts run in parallel
/// and each owns its state, so the result does not depend on scheduling.
inline GrapeResult optimize(const GrapeProblem& p) {
    validate(p);
    std::vector<GrapeResult> runs(static_cast<std::size_t>(p.restarts));
    parallel_for(runs.size(), p.workers, [&](std::size_t k) {
        runs[k] = optimize_from(p, initial_controls(p, static_cast<int>(k)));
        runs[k].restart_index = static_cast<int>(k);
    });
    std::size_t best = 0;
    for (std::size_t k = 1; k < runs.size(); ++k)
        if (runs[k].j_final < runs[best].j_final) best = k;
    return runs[best];
}

struct TimeSweepPoint {
    double t_final = 0.0;
    double best_j = 0.0;
    int iterations = 0;
    int restart_index = -1;
    bool padded = false;  // best came from the previous pulse followed by a zero-field segment
    std::string error;
    GrapeResult result;
};

struct TimeSweep {
    std::vector<TimeSweepPoint> points;
    std::optional<double> cliff;  // first t_final with best J below the threshold
};

/// J(t_final) curve. Longer times can always reuse the previous best pulse
/// followed by zero field (free precession keeps z), so each point also scores
/// that padded pulse exactly and keeps whichever is better.
inline TimeSweep time_sweep(const GrapeProblem& tmpl, const std::vector<double>& t_grid, double cliff_threshold = 1e-3) {
    for (std::size_t k = 0; k < t_grid.size(); ++k) {
        if (!(t_grid[k] > 0.0)) throw std::invalid_argument("time_sweep: times must be positive");
        if (k > 0 && t_grid[k] <= t_grid[k - 1]) throw std::invalid_argument("time_sweep: times must be increasing");
    }
    TimeSweep out;
    std::optional<GrapeResult> prev;
    for (double t : t_grid) {
        TimeSweepPoint pt;
        pt.t_final = t;
        try {
            GrapeProblem p = tmpl;
            p.t_final = t;
            pt.result = optimize(p);
            if (prev) {
                auto segs = prev->pulse.segments();
                segs.push_back({t - prev->pulse.total_duration(), 0.0, 0.0});
                PiecewisePulse padded(segs);
                const double jp = figure_of_merit(propagate_final({}, p.omega, padded), p.target);
                if (jp < pt.result.j_final) {
                    pt.result.pulse = padded;
                    pt.result.controls.clear();
                    pt.result.j_final = jp;
                    pt.result.reached = jp < p.j_threshold;
                    pt.result.restart_index = prev->restart_index;
                    pt.padded = true;
                }
            }
            pt.best_j = pt.result.j_final;
            pt.iterations = pt.result.iterations;
            pt.restart_index = pt.result.restart_index;
            prev = pt.result;
            if (!out.cliff && pt.best_j < cliff_threshold) out.cliff = t;
        } catch (const std::exception& e) {
            pt.error = e.what();
            pt.best_j = std::numeric_limits<double>::quiet_NaN();
        }
        out.points.push_back(std::move(pt));
    }
    return out;
}

}  // namespace selspin
