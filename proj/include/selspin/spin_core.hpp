#pragma once

// Two uncoupled spins with offsets -omega (spin 1) and +omega (spin 2) driven
// by a common bounded transverse field u = (ux, uy), |u| <= 1:
//
//     dM_i/dt = M_i x (ux, uy, omega_i)

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace selspin {

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;

    [[nodiscard]] double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    [[nodiscard]] Vec3 cross(const Vec3& o) const {
        return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
    }
    [[nodiscard]] double norm() const { return std::sqrt(dot(*this)); }
    [[nodiscard]] Vec3 normalized() const {
        const double n = norm();
        return {x / n, y / n, z / n};
    }

    friend Vec3 operator+(Vec3 a, const Vec3& b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
    friend Vec3 operator-(Vec3 a, const Vec3& b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
    friend Vec3 operator*(double k, const Vec3& a) { return {k * a.x, k * a.y, k * a.z}; }
    friend Vec3 operator*(const Vec3& a, double k) { return k * a; }
    friend bool operator==(const Vec3&, const Vec3&) = default;
};

using BlochVector = Vec3;

inline constexpr BlochVector north_pole{0.0, 0.0, 1.0};

struct SpinPairState {
    BlochVector m1 = north_pole;
    BlochVector m2 = north_pole;
    double time = 0.0;

    friend bool operator==(const SpinPairState&, const SpinPairState&) = default;
};

enum class TransferTarget { SelectiveExcitation, SelectiveInversion };

inline std::string to_string(TransferTarget t) {
    return t == TransferTarget::SelectiveExcitation ? "excitation" : "inversion";
}

inline TransferTarget parse_target(const std::string& name) {
    if (name == "excitation") return TransferTarget::SelectiveExcitation;
    if (name == "inversion") return TransferTarget::SelectiveInversion;
    throw std::invalid_argument("unknown target '" + name + "' (expected excitation or inversion)");
}

struct Control {
    double ux = 0.0, uy = 0.0;
};

inline constexpr double amplitude_tolerance = 1e-12;
inline constexpr double min_segment_duration = 1e-14;

class PulseValidationError : public std::invalid_argument {
public:
    PulseValidationError(std::size_t index, const std::string& what)
        : std::invalid_argument("segment " + std::to_string(index) + ": " + what), index_(index) {}
    [[nodiscard]] std::size_t segment_index() const { return index_; }

private:
    std::size_t index_;
};

struct Segment {
    double dt = 0.0;
    double ux = 0.0, uy = 0.0;
};

/// Piecewise-constant control. Segments shorter than 1e-14 are dropped.
class PiecewisePulse {
public:
    PiecewisePulse() = default;

    explicit PiecewisePulse(const std::vector<Segment>& segments) {
        segments_.reserve(segments.size());
        for (std::size_t i = 0; i < segments.size(); ++i) {
            const auto& s = segments[i];
            if (!std::isfinite(s.dt) || !std::isfinite(s.ux) || !std::isfinite(s.uy))
                throw PulseValidationError(i, "non-finite value");
            if (s.dt < 0.0) throw PulseValidationError(i, "negative duration " + std::to_string(s.dt));
            const double a2 = s.ux * s.ux + s.uy * s.uy;
            if (a2 > 1.0 + amplitude_tolerance)
                throw PulseValidationError(i, "amplitude " + std::to_string(std::sqrt(a2)) + " exceeds the bound 1");
            if (s.dt < min_segment_duration) continue;
            segments_.push_back(s);
            total_ += s.dt;
        }
    }

    [[nodiscard]] const std::vector<Segment>& segments() const { return segments_; }
    [[nodiscard]] std::size_t size() const { return segments_.size(); }
    [[nodiscard]] bool empty() const { return segments_.empty(); }
    [[nodiscard]] double total_duration() const { return total_; }

    /// Control active at time t (the later segment wins at a boundary).
    [[nodiscard]] Control at(double t) const {
        double acc = 0.0;
        for (const auto& s : segments_) {
            acc += s.dt;
            if (t < acc) return {s.ux, s.uy};
        }
        if (segments_.empty()) return {};
        return {segments_.back().ux, segments_.back().uy};
    }

private:
    std::vector<Segment> segments_;
    double total_ = 0.0;
};

// ---------------------------------------------------------------------------

/// Exact solution of dM/dt = M x n over dt: a rotation about n by -|n| dt.
inline Vec3 rotate_about_field(const Vec3& m, const Vec3& n, double dt) {
    const double omega = n.norm();
    if (omega == 0.0 || dt == 0.0) return m;
    const Vec3 k = (1.0 / omega) * n;
    const double theta = -omega * dt;
    const double c = std::cos(theta), s = std::sin(theta);
    return c * m + s * k.cross(m) + ((1.0 - c) * k.dot(m)) * k;
}

inline void check_amplitude(double ux, double uy) {
    if (!std::isfinite(ux) || !std::isfinite(uy) || ux * ux + uy * uy > 1.0 + amplitude_tolerance)
        throw std::invalid_argument("control amplitude exceeds the bound 1");
}

/// Exact propagation of both spins under a constant field.
inline SpinPairState propagate_constant(const SpinPairState& state, double omega, double ux, double uy,
                                        double dt) {
    if (!(dt >= 0.0)) throw std::invalid_argument("propagate_constant: negative or NaN duration");
    check_amplitude(ux, uy);
    return {rotate_about_field(state.m1, {ux, uy, -omega}, dt),
            rotate_about_field(state.m2, {ux, uy, omega}, dt), state.time + dt};
}

struct PropagationOptions {
    // Extra evenly spaced samples inside each segment (0 keeps segment ends only).
    int samples_per_segment = 0;
};

/// Chains propagate_constant over the pulse; element 0 is the input state.
inline std::vector<SpinPairState> propagate_pulse(const SpinPairState& state, double omega,
                                                  const PiecewisePulse& pulse,
                                                  PropagationOptions opts = {}) {
    std::vector<SpinPairState> out{state};
    SpinPairState cur = state;
    const int sub = std::max(0, opts.samples_per_segment) + 1;
    for (const auto& seg : pulse.segments()) {
        if (sub == 1) {
            cur = propagate_constant(cur, omega, seg.ux, seg.uy, seg.dt);
            out.push_back(cur);
            continue;
        }
        const SpinPairState start = cur;
        for (int j = 1; j <= sub; ++j) {
            SpinPairState p = propagate_constant(start, omega, seg.ux, seg.uy, seg.dt * j / sub);
            out.push_back(p);
        }
        cur = out.back();
    }
    return out;
}

inline SpinPairState propagate_final(const SpinPairState& state, double omega, const PiecewisePulse& pulse) {
    SpinPairState cur = state;
    for (const auto& seg : pulse.segments()) cur = propagate_constant(cur, omega, seg.ux, seg.uy, seg.dt);
    return cur;
}

// ---------------------------------------------------------------------------
// Fixed-step RK4 for smooth time-dependent fields.

class IntegrationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct BlochTrajectory {
    std::vector<SpinPairState> states;
    double max_norm_drift = 0.0;  // largest pre-renormalization | |M| - 1 | over all steps
};

inline constexpr double max_step_drift = 1e-6;

namespace detail {

inline Vec3 bloch_rhs(const Vec3& m, double ux, double uy, double offset) {
    return m.cross(Vec3{ux, uy, offset});
}

}  // namespace detail

/// Integrates the Bloch equation with u = field(t). The last step is
/// shortened to land on t_end. Vectors are renormalized after every step.
template <class Field>
BlochTrajectory integrate_bloch(const SpinPairState& state, double omega, Field&& field, double t_end,
                                double step) {
    if (!(step > 0.0)) throw std::invalid_argument("integrate_bloch: step must be positive");
    if (!(t_end >= state.time)) throw std::invalid_argument("integrate_bloch: t_end before start");
    BlochTrajectory traj;
    traj.states.push_back(state);
    SpinPairState cur = state;
    const double t0 = state.time;
    const auto n_steps = static_cast<std::size_t>(std::ceil((t_end - t0) / step - 1e-9));
    for (std::size_t k = 0; k < n_steps; ++k) {
        const double t = t0 + static_cast<double>(k) * step;
        const double h = (k + 1 == n_steps) ? (t_end - t) : step;
        if (h <= 0.0) break;
        const Control c1 = field(t);
        const Control c2 = field(t + 0.5 * h);
        const Control c3 = field(t + h);
        for (const auto& c : {c1, c2, c3})
            if (c.ux * c.ux + c.uy * c.uy > 1.0 + 1e-9)
                throw IntegrationError("integrate_bloch: field amplitude exceeds the bound 1");
        auto stepper = [&](const Vec3& m, double offset) {
            const Vec3 k1 = detail::bloch_rhs(m, c1.ux, c1.uy, offset);
            const Vec3 k2 = detail::bloch_rhs(m + (0.5 * h) * k1, c2.ux, c2.uy, offset);
            const Vec3 k3 = detail::bloch_rhs(m + (0.5 * h) * k2, c2.ux, c2.uy, offset);
            const Vec3 k4 = detail::bloch_rhs(m + h * k3, c3.ux, c3.uy, offset);
            return m + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        };
        Vec3 a = stepper(cur.m1, -omega);
        Vec3 b = stepper(cur.m2, omega);
        const double drift = std::max(std::abs(a.norm() - 1.0), std::abs(b.norm() - 1.0));
        if (drift > max_step_drift)
            throw IntegrationError("integrate_bloch: norm drift " + std::to_string(drift) + " at t = " +
                                   std::to_string(t));
        traj.max_norm_drift = std::max(traj.max_norm_drift, drift);
        cur = {a.normalized(), b.normalized(), t + h};
        traj.states.push_back(cur);
    }
    return traj;
}

/// Field known on a uniform time grid; linear interpolation between nodes,
/// exact at the nodes. Values beyond the grid are clamped.
class SampledField {
public:
    SampledField(double t0, double dt, std::vector<Control> samples)
        : t0_(t0), dt_(dt), samples_(std::move(samples)) {
        if (!(dt > 0.0) || samples_.empty()) throw std::invalid_argument("SampledField: empty or bad grid");
    }

    Control operator()(double t) const {
        const double x = (t - t0_) / dt_;
        const double k = std::round(x);
        if (std::abs(x - k) < 1e-9) return samples_[clamp_index(static_cast<long>(k))];
        const long i = static_cast<long>(std::floor(x));
        const double w = x - static_cast<double>(i);
        const Control a = samples_[clamp_index(i)], b = samples_[clamp_index(i + 1)];
        Control c{(1 - w) * a.ux + w * b.ux, (1 - w) * a.uy + w * b.uy};
        const double n = std::hypot(c.ux, c.uy);
        if (n > 1.0) c = {c.ux / n, c.uy / n};
        return c;
    }

private:
    [[nodiscard]] std::size_t clamp_index(long i) const {
        if (i < 0) return 0;
        return std::min(static_cast<std::size_t>(i), samples_.size() - 1);
    }
    double t0_, dt_;
    std::vector<Control> samples_;
};

// ---------------------------------------------------------------------------

/// J = z1^2 + (1 - z2)^2 (excitation) or (1 + z1)^2 + (1 - z2)^2 (inversion).
inline double figure_of_merit(const SpinPairState& state, TransferTarget target) {
    const double z1 = state.m1.z, z2 = state.m2.z;
    const double a = (target == TransferTarget::SelectiveExcitation) ? z1 : 1.0 + z1;
    return a * a + (1.0 - z2) * (1.0 - z2);
}

}  // namespace selspin
