#pragma once

// Control landscape of the regular extremal family: every angle pair
// (phi1, phi2) generates an extremal, whose field is applied to both spins;
// the transfer time of a cell is where J first dips below a threshold.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <gsl/gsl_errno.h>
#include <gsl/gsl_multimin.h>

#include <Eigen/Dense>
#include <unsupported/Eigen/NonLinearOptimization>
#include <unsupported/Eigen/NumericalDiff>

#include "selspin/parallel.hpp"
#include "selspin/pmp_extremal.hpp"
#include "selspin/singular_design.hpp"
#include "selspin/spin_core.hpp"

namespace selspin {

/// Scan horizon when none is given: 1.3 x the singular design time below the
/// threshold; above it 2.5 for excitation and 4.5 for inversion, whose
/// resonant minima sit at t = pi.
inline double default_t_max(double omega, TransferTarget target) {
    if (omega > 0.0 && omega <= singular_threshold(target)) return 1.3 * solve_design(target, omega).t_final;
    return target == TransferTarget::SelectiveExcitation ? 2.5 : 4.5;
}

struct ScanOptions {
    int grid_n = 256;
    double t_max = 0.0;  // <= 0 selects default_t_max
    double dt = 1e-3;
    double j_threshold = 1e-4;
    int workers = 0;
    double r_min = default_r_min;
};

struct LandscapeCell {
    int i = 0, j = 0;
    double phi1 = 0.0, phi2 = 0.0;
    double r0 = 0.0, s = 0.0;
    double j_min = 0.0;
    double t_hit = 0.0;
    bool converged = false;
    bool singular_hit = false;  // r fell below r_min; the rest of the run has zero field
    bool degenerate = false;    // r(0) = 0: the extremal starts on the singular set
};

struct LandscapeGrid {
    double omega = 0.0;
    TransferTarget target = TransferTarget::SelectiveExcitation;
    int n = 0;
    double t_max = 0.0, dt = 0.0, j_threshold = 0.0;
    std::vector<LandscapeCell> cells;  // row-major: index i * n + j, phi1 = pi i / n, phi2 = pi j / n

    [[nodiscard]] const LandscapeCell& at(int i, int j) const { return cells.at(static_cast<std::size_t>(i) * n + j); }
};

inline double wrap_angle_pi(double a) {
    double w = std::fmod(a, std::numbers::pi);
    if (w < 0.0) w += std::numbers::pi;
    if (w >= std::numbers::pi) w = 0.0;
    return w;
}

/// Runs one extremal for t_max with joint RK4 at step dt and scores it. The
/// first dip of J below the threshold is followed to its bottom; without a
/// dip the global minimum over the samples is reported. After a singular hit
/// the field is zero, which freezes z1, z2 and hence J, so the run stops there.
inline LandscapeCell evaluate_cell(double omega, TransferTarget target, double phi1, double phi2, double t_max,
                                   double dt = 1e-3, double j_threshold = 1e-4, double r_min = default_r_min) {
    if (!(t_max > 0.0) || !(dt > 0.0)) throw std::invalid_argument("evaluate_cell: t_max and dt must be positive");
    LandscapeCell cell;
    cell.phi1 = phi1;
    cell.phi2 = phi2;
    const auto inv = invariants_from_angles({omega, phi1, phi2});
    cell.r0 = inv.r0;
    cell.s = inv.s;
    const auto init = initial_costates({omega, phi1, phi2});
    ExtremalSpinState x{init.state, SpinPairState{}};
    double best = figure_of_merit(x.spins, target), t_best = 0.0;
    bool dipped = best < j_threshold;
    if (init.degenerate) {
        cell.degenerate = cell.singular_hit = true;
    } else {
        const auto n_steps = static_cast<std::size_t>(std::ceil(t_max / dt - 1e-9));
        for (std::size_t k = 0; k < n_steps && !dipped; ++k) {
            const double t = static_cast<double>(k) * dt;
            const double h = (k + 1 == n_steps) ? (t_max - t) : dt;
            if (h <= 0.0) break;
            x = rk4_joint_step(x, omega, h, r_min);
            const double jv = figure_of_merit(x.spins, target);
            if (jv < best) {
                best = jv;
                t_best = t + h;
            }
            if (jv < j_threshold) {
                // Follow the dip to its bottom.
                for (std::size_t q = k + 1; q < n_steps; ++q) {
                    const double tq = static_cast<double>(q) * dt;
                    const double hq = (q + 1 == n_steps) ? (t_max - tq) : dt;
                    if (hq <= 0.0) break;
                    const auto y = rk4_joint_step(x, omega, hq, r_min);
                    const double jy = figure_of_merit(y.spins, target);
                    if (jy >= best) break;
                    x = y;
                    best = jy;
                    t_best = tq + hq;
                }
                dipped = true;
            }
            if (x.c.r() < r_min) {
                cell.singular_hit = true;
                break;
            }
        }
    }
    cell.j_min = best;
    cell.t_hit = t_best;
    cell.converged = best < j_threshold;
    return cell;
}

inline LandscapeGrid scan(double omega, TransferTarget target, const ScanOptions& opt = {}) {
    if (opt.grid_n < 32) throw std::invalid_argument("scan: grid_n must be at least 32");
    if (!(omega > 0.0) || !std::isfinite(omega)) throw std::invalid_argument("scan: omega must be positive");
    LandscapeGrid g;
    g.omega = omega;
    g.target = target;
    g.n = opt.grid_n;
    g.t_max = opt.t_max > 0.0 ? opt.t_max : default_t_max(omega, target);
    g.dt = opt.dt;
    g.j_threshold = opt.j_threshold;
    const auto n = static_cast<std::size_t>(g.n);
    g.cells.resize(n * n);
    parallel_for(n * n, opt.workers, [&](std::size_t idx) {
        const int i = static_cast<int>(idx / n), j = static_cast<int>(idx % n);
        auto c = evaluate_cell(omega, target, std::numbers::pi * i / g.n, std::numbers::pi * j / g.n, g.t_max, g.dt,
                               g.j_threshold, opt.r_min);
        c.i = i;
        c.j = j;
        g.cells[idx] = c;
    });
    return g;
}

/// Converged cell with the smallest t_hit (ties: smaller j_min); without any
/// converged cell, the one with the smallest j_min.
inline const LandscapeCell& best_cell(const LandscapeGrid& g) {
    if (g.cells.empty()) throw std::invalid_argument("best_cell: empty grid");
    const LandscapeCell* best = nullptr;
    for (const auto& c : g.cells) {
        if (!best) {
            best = &c;
            continue;
        }
        if (c.converged != best->converged) {
            if (c.converged) best = &c;
            continue;
        }
        if (c.converged) {
            if (c.t_hit < best->t_hit || (c.t_hit == best->t_hit && c.j_min < best->j_min)) best = &c;
        } else if (c.j_min < best->j_min) {
            best = &c;
        }
    }
    return *best;
}

/// Annotates each cell with (r0, s) from the angles.
inline std::vector<LandscapeCell> angles_to_invariants_map(const LandscapeGrid& g) {
    std::vector<LandscapeCell> out = g.cells;
    for (auto& c : out) {
        const auto inv = invariants_from_angles({g.omega, c.phi1, c.phi2});
        c.r0 = inv.r0;
        c.s = inv.s;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Refinement.

enum class Regime { Regular, Singular };

inline std::string to_string(Regime r) { return r == Regime::Regular ? "regular" : "singular"; }

struct OptimumReport {
    double phi1_star = 0.0, phi2_star = 0.0;
    double r0_star = 0.0, s_star = 0.0;
    double t_f_star = 0.0;
    double j_star = 0.0;
    Regime regime = Regime::Regular;
    bool converged = false;
    std::string message;
};

struct RefineOptions {
    double dt = 1e-3;            // nominal RK4 step; the count is fixed per run so t enters smoothly
    double j_target = 1e-8;
    int nelder_mead_iterations = 400;
    double singular_tolerance = 1e-4;
    double r_min = default_r_min;
};

/// Final spins of the extremal run to time t with n equal RK4 steps. A
/// singular hit switches to the zero field for the remaining time.
inline SpinPairState extremal_final_state(double omega, double phi1, double phi2, double t, int n,
                                          double r_min = default_r_min) {
    const auto init = initial_costates({omega, phi1, phi2});
    if (init.degenerate || t <= 0.0) return propagate_constant({}, omega, 0.0, 0.0, std::max(0.0, t));
    ExtremalSpinState x{init.state, SpinPairState{}};
    const double h = t / n;
    for (int k = 0; k < n; ++k) {
        x = rk4_joint_step(x, omega, h, r_min);
        if (x.c.r() < r_min) return propagate_constant(x.spins, omega, 0.0, 0.0, t - (k + 1) * h);
    }
    return x.spins;
}

/// Residuals whose common zero is the exact transfer. Transverse components of
/// the pole targets are used instead of 1 -/+ z alone, which vanish quadratically.
inline Eigen::VectorXd transfer_residuals(const SpinPairState& s, TransferTarget target) {
    if (target == TransferTarget::SelectiveExcitation) {
        Eigen::VectorXd r(4);
        r << s.m1.z, s.m2.x, s.m2.y, 1.0 - s.m2.z;
        return r;
    }
    Eigen::VectorXd r(6);
    r << s.m1.x, s.m1.y, 1.0 + s.m1.z, s.m2.x, s.m2.y, 1.0 - s.m2.z;
    return r;
}

namespace detail {

struct RefineProblem {
    double omega;
    TransferTarget target;
    int n_steps;
    double r_min;

    [[nodiscard]] SpinPairState run(const Eigen::VectorXd& x) const {
        return extremal_final_state(omega, x[0], x[1], std::max(1e-9, x[2]), n_steps, r_min);
    }
    [[nodiscard]] double objective(const Eigen::VectorXd& x) const {
        if (x[2] <= 0.0) return 10.0;
        return figure_of_merit(run(x), target);
    }
};

struct ResidualFunctor {
    using Scalar = double;
    using InputType = Eigen::VectorXd;
    using ValueType = Eigen::VectorXd;
    using JacobianType = Eigen::MatrixXd;
    enum { InputsAtCompileTime = Eigen::Dynamic, ValuesAtCompileTime = Eigen::Dynamic };

    const RefineProblem* p;
    int m;

    [[nodiscard]] int inputs() const { return 3; }
    [[nodiscard]] int values() const { return m; }
    int operator()(const Eigen::VectorXd& x, Eigen::VectorXd& f) const {
        f = transfer_residuals(p->run(x), p->target);
        return 0;
    }
};

inline double nm_objective(const gsl_vector* v, void* params) {
    const auto* p = static_cast<const RefineProblem*>(params);
    Eigen::VectorXd x(3);
    for (int k = 0; k < 3; ++k) x[k] = gsl_vector_get(v, k);
    return p->objective(x);
}

/// Derivative-free descent of J over (phi1, phi2, t) with GSL's simplex.
inline Eigen::VectorXd nelder_mead(const RefineProblem& p, Eigen::VectorXd x0, const Eigen::Vector3d& step,
                                   int max_iter, double j_stop) {
    gsl_multimin_function f{&nm_objective, 3, const_cast<RefineProblem*>(&p)};
    gsl_vector* x = gsl_vector_alloc(3);
    gsl_vector* ss = gsl_vector_alloc(3);
    for (int k = 0; k < 3; ++k) {
        gsl_vector_set(x, k, x0[k]);
        gsl_vector_set(ss, k, step[k]);
    }
    gsl_multimin_fminimizer* s = gsl_multimin_fminimizer_alloc(gsl_multimin_fminimizer_nmsimplex2, 3);
    gsl_multimin_fminimizer_set(s, &f, x, ss);
    for (int it = 0; it < max_iter; ++it) {
        if (gsl_multimin_fminimizer_iterate(s) != GSL_SUCCESS) break;
        if (s->fval < j_stop || gsl_multimin_test_size(gsl_multimin_fminimizer_size(s), 1e-10) == GSL_SUCCESS) break;
    }
    for (int k = 0; k < 3; ++k) x0[k] = gsl_vector_get(s->x, k);
    gsl_multimin_fminimizer_free(s);
    gsl_vector_free(ss);
    gsl_vector_free(x);
    return x0;
}

}  // namespace detail

/// Local optimum from a seed cell: simplex descent on J, then a
/// Levenberg-Marquardt solve of the transfer residuals so the root is hit to
/// working precision. The reported point is the root nearest the seed; its
/// time is minimal among the roots reachable from that basin.
inline OptimumReport refine(double omega, TransferTarget target, const LandscapeCell& seed,
                            const RefineOptions& opt = {}) {
    static const bool gsl_quiet = [] {
        gsl_set_error_handler_off();
        return true;
    }();
    (void)gsl_quiet;
    if (!(seed.t_hit > 0.0)) {
        OptimumReport bad;
        bad.message = "seed has no positive hit time";
        bad.j_star = seed.j_min;
        return bad;
    }
    const int n_steps = std::max(16, static_cast<int>(std::ceil(seed.t_hit * 1.2 / opt.dt)));
    const detail::RefineProblem prob{omega, target, n_steps, opt.r_min};
    Eigen::VectorXd x(3);
    x << seed.phi1, seed.phi2, seed.t_hit;

    x = detail::nelder_mead(prob, x, Eigen::Vector3d(0.01, 0.01, 0.005), opt.nelder_mead_iterations,
                            opt.j_target * 1e-2);

    detail::ResidualFunctor fn{&prob, target == TransferTarget::SelectiveExcitation ? 4 : 6};
    Eigen::NumericalDiff<detail::ResidualFunctor, Eigen::Central> nd(fn, 1e-7);
    Eigen::LevenbergMarquardt<Eigen::NumericalDiff<detail::ResidualFunctor, Eigen::Central>> lm(nd);
    lm.parameters.xtol = 1e-14;
    lm.parameters.ftol = 1e-14;
    lm.parameters.maxfev = 400;
    Eigen::VectorXd y = x;
    lm.minimize(y);
    if (y.allFinite() && y[2] > 0.0 && prob.objective(y) <= prob.objective(x)) x = y;

    OptimumReport rep;
    rep.phi1_star = wrap_angle_pi(x[0]);
    rep.phi2_star = wrap_angle_pi(x[1]);
    rep.t_f_star = x[2];
    rep.j_star = prob.objective(x);
    const auto inv = invariants_from_angles({omega, rep.phi1_star, rep.phi2_star});
    rep.r0_star = inv.r0;
    rep.s_star = inv.s;
    rep.regime = (std::abs(inv.s) < opt.singular_tolerance &&
                  std::abs(inv.r0 - omega * std::numbers::sqrt2) < opt.singular_tolerance)
                     ? Regime::Singular
                     : Regime::Regular;
    rep.converged = rep.j_star < opt.j_target;
    if (!rep.converged) rep.message = "refinement stalled at J = " + std::to_string(rep.j_star);
    return rep;
}

/// Converged cells in order of hit time, skipping cells within `spacing` grid
/// steps (periodic distance) of one already taken, so each seed probes a
/// different basin.
inline std::vector<LandscapeCell> pick_seeds(const LandscapeGrid& g, int count, int spacing = 4) {
    std::vector<const LandscapeCell*> order;
    for (const auto& c : g.cells)
        if (c.converged && !c.degenerate) order.push_back(&c);
    if (order.empty()) order.push_back(&best_cell(g));
    std::stable_sort(order.begin(), order.end(), [](const LandscapeCell* a, const LandscapeCell* b) {
        return a->t_hit < b->t_hit || (a->t_hit == b->t_hit && a->j_min < b->j_min);
    });
    auto pdist = [&](int a, int b) {
        const int d = std::abs(a - b) % g.n;
        return std::min(d, g.n - d);
    };
    std::vector<LandscapeCell> seeds;
    for (const auto* c : order) {
        bool near = false;
        for (const auto& s : seeds)
            if (pdist(c->i, s.i) <= spacing && pdist(c->j, s.j) <= spacing) near = true;
        if (near) continue;
        seeds.push_back(*c);
        if (static_cast<int>(seeds.size()) >= count) break;
    }
    return seeds;
}

/// Refines several seeds and keeps the converged optimum with the smallest
/// time; without any, the seed result with the smallest J.
inline OptimumReport refine_global(const LandscapeGrid& g, int n_seeds = 8, const RefineOptions& opt = {},
                                   int workers = 0) {
    const auto seeds = pick_seeds(g, n_seeds);
    std::vector<OptimumReport> reps(seeds.size());
    parallel_for(seeds.size(), workers, [&](std::size_t k) { reps[k] = refine(g.omega, g.target, seeds[k], opt); });
    const OptimumReport* best = nullptr;
    for (const auto& r : reps) {
        if (!best) {
            best = &r;
            continue;
        }
        if (r.converged != best->converged) {
            if (r.converged) best = &r;
        } else if (r.converged ? r.t_f_star < best->t_f_star : r.j_star < best->j_star) {
            best = &r;
        }
    }
    return *best;
}

// ---------------------------------------------------------------------------
// Regular branch at the threshold.

struct ThresholdLimit {
    double t_limit = std::numeric_limits<double>::quiet_NaN();  // extrapolated J -> 0 time
    double slope = 0.0;                                           // c in t = t_limit - c J^(1/4)
    std::vector<std::pair<double, double>> valley;                // (t, J) samples used in the fit
    bool ok = false;
    std::string message;
};

/// At the threshold the regular family has no isolated root: J decreases
/// along a valley (s -> 0, r0 -> omega sqrt 2) and only vanishes in the limit,
/// with J ~ (t_limit - t)^4 (the residual is quadratic in the time gap).
/// Repeated refinement walks down the valley; the samples below j_collect
/// are fitted to t = t_limit - c J^(1/4).
inline ThresholdLimit regular_threshold_limit(double omega, TransferTarget target, int grid_n = 64, int rounds = 25,
                                              double j_collect = 1e-8, int workers = 0) {
    ThresholdLimit out;
    ScanOptions so;
    so.grid_n = grid_n;
    so.workers = workers;
    so.t_max = 1.3 * 2.0 * singular_onset(std::min(omega, singular_omega_max));
    const auto g = scan(omega, target, so);
    const auto start = refine_global(g, 8, {}, workers);
    LandscapeCell c;
    c.phi1 = start.phi1_star;
    c.phi2 = start.phi2_star;
    c.t_hit = start.t_f_star;
    RefineOptions ro;
    ro.dt = 2e-4;
    ro.j_target = 0.0;
    double last_j = start.j_star;
    int flat = 0;
    for (int k = 0; k < rounds && flat < 2; ++k) {
        const auto q = refine(omega, target, c, ro);
        c.phi1 = q.phi1_star;
        c.phi2 = q.phi2_star;
        c.t_hit = q.t_f_star;
        if (q.j_star < j_collect && q.j_star > 0.0) out.valley.emplace_back(q.t_f_star, q.j_star);
        flat = q.j_star > 0.99 * last_j ? flat + 1 : 0;
        last_j = std::min(last_j, q.j_star);
    }
    if (out.valley.size() < 3) {
        out.message = "valley too short for extrapolation (" + std::to_string(out.valley.size()) + " samples)";
        return out;
    }
    // Least squares for t = a + b x with x = J^(1/4).
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double n = static_cast<double>(out.valley.size());
    for (const auto& [t, j] : out.valley) {
        const double x = std::pow(j, 0.25);
        sx += x;
        sy += t;
        sxx += x * x;
        sxy += x * t;
    }
    const double den = n * sxx - sx * sx;
    if (!(std::abs(den) > 0.0)) {
        out.message = "degenerate valley samples";
        return out;
    }
    const double b = (n * sxy - sx * sy) / den;
    out.t_limit = (sy - b * sx) / n;
    out.slope = -b;
    out.ok = true;
    return out;
}

// ---------------------------------------------------------------------------
// Offset sweeps.

struct SweepPoint {
    double omega = 0.0;
    double t_f = std::numeric_limits<double>::quiet_NaN();
    double inv_tf = std::numeric_limits<double>::quiet_NaN();
    Regime regime = Regime::Regular;
    double phi1_star = 0.0, phi2_star = 0.0, r0_star = 0.0, s_star = 0.0;
    double j_star = 0.0;
    bool ok = false;
    std::string error;
};

struct SweepOptions {
    ScanOptions scan;
    RefineOptions refine;
    int n_seeds = 8;
};

/// Regular optimum at one offset: scan, then multi-seed refinement.
inline OptimumReport regular_optimum(double omega, TransferTarget target, const SweepOptions& opt = {}) {
    const auto g = scan(omega, target, opt.scan);
    return refine_global(g, opt.n_seeds, opt.refine, opt.scan.workers);
}

/// Piecewise-constant pulse of the extremal over [0, t_f]: n equal segments,
/// each carrying the regular field at its midpoint, and the zero field once
/// the extremal has entered the singular set.
inline PiecewisePulse optimum_pulse(double omega, double phi1, double phi2, double t_f, int n,
                                    double r_min = default_r_min) {
    if (n < 1 || !(t_f > 0.0)) throw std::invalid_argument("optimum_pulse: needs n >= 1 and t_f > 0");
    const auto init = initial_costates({omega, phi1, phi2});
    if (init.degenerate) throw std::invalid_argument("optimum_pulse: degenerate angles (" + init.reason + ")");
    const double h = t_f / n;
    CostateState c = init.state;
    bool singular = c.r() < r_min;
    std::vector<Segment> segs;
    segs.reserve(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) {
        Control u{};
        if (!singular) {
            u = regular_field(rk4_costate_step(c, omega, 0.5 * h, r_min), r_min);
            c = rk4_costate_step(c, omega, h, r_min);
            singular = c.r() < r_min;
        }
        const double a = std::hypot(u.ux, u.uy);
        if (a > 1.0) u = {u.ux / a, u.uy / a};
        segs.push_back({h, u.ux, u.uy});
    }
    return PiecewisePulse(segs);
}

/// Minimum-time curve over offsets. At or below the target's threshold the
/// singular design supplies t_f; above it the refined regular optimum does.
/// Failures are recorded per point and the sweep carries on.
inline std::vector<SweepPoint> sweep_offsets(TransferTarget target, const std::vector<double>& omegas,
                                             const SweepOptions& opt = {}) {
    for (std::size_t k = 0; k < omegas.size(); ++k) {
        if (!(omegas[k] > 0.0)) throw std::invalid_argument("sweep_offsets: offsets must be positive");
        if (k > 0 && omegas[k] < omegas[k - 1]) throw std::invalid_argument("sweep_offsets: offsets must be sorted");
    }
    std::vector<SweepPoint> out;
    for (double w : omegas) {
        SweepPoint p;
        p.omega = w;
        try {
            if (w <= singular_threshold(target)) {
                const auto d = solve_design(target, w);
                const auto e = singular_entry_angles(w);
                p.t_f = d.t_final;
                p.regime = Regime::Singular;
                p.phi1_star = e.phi1;
                p.phi2_star = e.phi2;
                p.r0_star = w * std::numbers::sqrt2;
                p.s_star = 0.0;
                p.j_star = figure_of_merit(propagate_final({}, w, build_pulse(d)), target);
                p.ok = true;
            } else {
                const auto r = regular_optimum(w, target, opt);
                p.t_f = r.t_f_star;
                p.regime = r.regime;
                p.phi1_star = r.phi1_star;
                p.phi2_star = r.phi2_star;
                p.r0_star = r.r0_star;
                p.s_star = r.s_star;
                p.j_star = r.j_star;
                p.ok = r.converged;
                if (!r.converged) p.error = r.message;
            }
            p.inv_tf = 1.0 / p.t_f;
        } catch (const std::exception& e) {
            p.error = e.what();
        }
        out.push_back(p);
    }
    return out;
}

}  // namespace selspin
