#pragma once

// Event-driven cycle-accurate switching simulator.
//
// Segments are propagated exactly with the same kernels as the analytic
// path; only the comparator crossing times are found numerically. The
// simulator is the reference against which the steady-state, Jacobian and
// transfer-function results are checked.

#include "pwmsd/steady_state.hpp"

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace pwmsd {

struct EventOptions {
    int grid = 64;
    Real rel_tol = 1e-14;  // on t, relative to t_max
    int max_iter = 200;
};

struct EventResult {
    Real t = 0.0;
    int crossings_bracketed = 0;  // sign changes seen on the scan grid
};

/// Smallest t in (0, t_max] with K x(t) - vc - Se t = 0 along the exact
/// segment solution. Scans a uniform grid for the first sign change, then
/// refines with Newton steps kept inside the bracket (bisection fallback).
[[nodiscard]] inline EventResult find_event_time(const PwlSegment& seg, const Vector& x0,
                                                 const ComparatorSpec& cmp, Real vc, Real t_max,
                                                 const EventOptions& opt = {}) {
    if (!(t_max > 0.0) || !std::isfinite(t_max)) {
        throw Error(ErrorCode::invalid_parameter, "t_max must be > 0");
    }
    const Vector b = seg.forcing();
    auto g_of = [&](const Vector& x, Real t) { return (cmp.K * x)(0) - vc - cmp.Se * t; };

    const Real g0 = g_of(x0, 0.0);
    if (g0 == 0.0) {
        throw Error(ErrorCode::event_not_reached, "comparator sits on its threshold at segment start (zero-crossing)");
    }

    const int N = std::max(opt.grid, 1);
    const Real h = t_max / N;
    const Propagator step = propagator(seg, h);

    std::vector<Vector> xs;
    std::vector<Real> gs;
    xs.reserve(static_cast<std::size_t>(N) + 1);
    gs.reserve(static_cast<std::size_t>(N) + 1);
    xs.push_back(x0);
    gs.push_back(g0);
    for (int j = 1; j <= N; ++j) {
        xs.push_back(advance(step, xs.back()));
        gs.push_back(g_of(xs.back(), j * h));
    }

    int first = -1;
    int crossings = 0;
    for (int j = 1; j <= N; ++j) {
        const Real ga = gs[static_cast<std::size_t>(j - 1)];
        const Real gb = gs[static_cast<std::size_t>(j)];
        if (gb == 0.0 || (ga < 0.0) != (gb < 0.0)) {
            if (ga == 0.0) continue;  // counted in the previous cell
            ++crossings;
            if (first < 0) first = j;
        }
    }
    if (first < 0) {
        throw Error(ErrorCode::event_not_reached,
                    "no comparator crossing within " + std::to_string(t_max) + " s (g(0) = " +
                        std::to_string(g0) + ", g(t_max) = " + std::to_string(gs.back()) + ")");
    }

    const Real ta = (first - 1) * h;
    const Vector& xa = xs[static_cast<std::size_t>(first - 1)];
    const Real ga = gs[static_cast<std::size_t>(first - 1)];
    if (gs[static_cast<std::size_t>(first)] == 0.0) return {first * h, crossings};

    // Safeguarded Newton on tau in [0, h] from the bracket start.
    Real lo = 0.0, hi = h;
    Real tau = 0.5 * h;
    const Real tol = opt.rel_tol * t_max;
    for (int it = 0; it < opt.max_iter && hi - lo > tol; ++it) {
        const Propagator p = propagator(seg, tau);
        const Vector x = advance(p, xa);
        const Real g = g_of(x, ta + tau);
        if (g == 0.0) return {ta + tau, crossings};
        if ((g < 0.0) == (ga < 0.0)) lo = tau;
        else hi = tau;
        const Real dg = (cmp.K * (seg.A * x + b))(0) - cmp.Se;
        Real next = (dg != 0.0) ? tau - g / dg : NAN;
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        // Newton converged to round-off: stop once the step is below tolerance.
        if (std::abs(next - tau) < 0.5 * tol) {
            tau = next;
            break;
        }
        tau = next;
    }
    return {ta + tau, crossings};
}

struct SimOptions {
    EventOptions event;
    bool clamp_to_clock = false;      // FF only: resolve a missing crossing at the period edges (see step_cycle)
    Real duration_cap_factor = 50.0;  // COT/COFT search horizon = factor * fixed duration
    int dense_per_segment = 0;        // extra interior samples per segment
    Real divergence_norm = 1e12;
    bool stop_when_converged = false;
    Real steady_tol = 1e-12;          // delta < tol * (1 + |x|)
    int steady_cycles = 5;
};

enum class EdgeKind { turn_on, turn_off, dense };

[[nodiscard]] constexpr std::string_view to_string(EdgeKind k) noexcept {
    switch (k) {
    case EdgeKind::turn_on: return "on";
    case EdgeKind::turn_off: return "off";
    case EdgeKind::dense: return "dense";
    }
    return "?";
}

struct TracePoint {
    Real t = 0.0;
    Vector x;
    std::size_t cycle = 0;
    EdgeKind kind = EdgeKind::dense;
};

struct CycleEdge {
    std::size_t index = 0;
    Real t = 0.0;
    Vector x;
    Real event_duration = 0.0;
    Real leading_duration = 0.0;
    bool clamped = false;
};

struct SimulationTrace {
    std::vector<TracePoint> samples;
    std::vector<CycleEdge> cycle_edges;
    bool converged = false;
    Real final_cycle_delta = 0.0;
    std::vector<std::string> diagnostics;

    [[nodiscard]] std::vector<Vector> sampled_states() const {
        std::vector<Vector> out;
        out.reserve(cycle_edges.size());
        for (const auto& e : cycle_edges) out.push_back(e.x);
        return out;
    }
};

struct SimStart {
    Vector x0;
    std::optional<Real> previous_event_duration;  // FF: sets the first leading segment
};

using ControlSequence = std::function<Real(std::size_t)>;

[[nodiscard]] inline ControlSequence constant_control(Real vc) {
    return [vc](std::size_t) { return vc; };
}

struct CycleStep {
    Vector x_mid;
    Vector x_next;
    Real t_lead = 0.0;
    Real t_event = 0.0;
    bool clamped = false;
    int crossings = 0;
};

/// One sampled cycle from the sampling edge: leading segment, then the
/// comparator-terminated segment.
[[nodiscard]] inline CycleStep step_cycle(const ConverterModel& m, const Vector& x, Real previous_event_duration,
                                          Real vc, const SimOptions& opt = {}) {
    const bool ff = is_fixed_frequency(m.pwm.kind);
    CycleStep s;
    s.t_lead = leading_duration(m.pwm, previous_event_duration);
    if (ff) s.t_lead = std::clamp(s.t_lead, 0.0, m.pwm.fixed_duration);
    s.x_mid = advance(propagator(m.leading_segment(), s.t_lead), x);

    const Real t_max = ff ? m.pwm.fixed_duration : opt.duration_cap_factor * m.pwm.fixed_duration;
    try {
        const EventResult ev = find_event_time(m.event_segment(), s.x_mid, m.comparator, vc, t_max, opt.event);
        s.t_event = ev.t;
        s.crossings = ev.crossings_bracketed;
    } catch (const Error& e) {
        if (!(ff && opt.clamp_to_clock && e.code() == ErrorCode::event_not_reached)) throw;
        // Comparator already past its threshold at the clock edge: the event
        // fires at once. Still short of it for the whole period: the clock
        // ends the segment.
        const PwlSegment& seg = m.event_segment();
        const Real g0 = (m.comparator.K * s.x_mid)(0) - vc;
        const Real dg0 = (m.comparator.K * (seg.A * s.x_mid + seg.forcing()))(0) - m.comparator.Se;
        s.t_event = (g0 == 0.0 || (g0 > 0.0) == (dg0 > 0.0)) ? 0.0 : t_max;
        s.clamped = true;
    }
    s.x_next = advance(propagator(m.event_segment(), s.t_event), s.x_mid);
    return s;
}

namespace detail {

inline EdgeKind edge_after_leading(PwmKind kind) {
    // The leading segment is off for peak-type logics, so it ends at a turn-on edge.
    return event_ends_on_segment(kind) ? EdgeKind::turn_on : EdgeKind::turn_off;
}

inline EdgeKind edge_after_event(PwmKind kind) {
    return event_ends_on_segment(kind) ? EdgeKind::turn_off : EdgeKind::turn_on;
}

inline void push_dense(std::vector<TracePoint>& out, const PwlSegment& seg, const Vector& x0, Real t0, Real T,
                       int dense, std::size_t cycle) {
    for (int j = 1; j < dense; ++j) {
        const Real tau = T * j / dense;
        out.push_back({t0 + tau, advance(propagator(seg, tau), x0), cycle, EdgeKind::dense});
    }
}

}  // namespace detail

/// Marches n_cycles sampled cycles. vc_fn(k) is the control value used for
/// the event that closes cycle k (k = 1..n_cycles); cycle_edges[0] is the
/// starting state.
[[nodiscard]] inline SimulationTrace simulate_cycles(const ConverterModel& m, const ControlSequence& vc_fn,
                                                     std::size_t n_cycles, const SimStart& start,
                                                     const SimOptions& opt = {}) {
    if (n_cycles < 1) throw Error(ErrorCode::invalid_parameter, "n_cycles must be >= 1");
    if (const auto diags = validate(m); !diags.empty()) {
        throw Error(ErrorCode::invalid_parameter, diags.front());
    }
    if (start.x0.size() != m.dim()) throw Error(ErrorCode::invalid_parameter, "x0 dimension mismatch");

    const PwmKind kind = m.pwm.kind;
    SimulationTrace tr;
    Vector x = start.x0;
    Real prev = start.previous_event_duration.value_or(0.5 * m.pwm.fixed_duration);
    Real t = 0.0;
    tr.cycle_edges.push_back({0, 0.0, x, prev, 0.0, false});
    tr.samples.push_back({0.0, x, 0, detail::edge_after_event(kind)});

    int quiet = 0;
    bool warned_multi = false;
    for (std::size_t k = 1; k <= n_cycles; ++k) {
        const CycleStep s = step_cycle(m, x, prev, vc_fn(k), opt);
        if (s.crossings > 1 && !warned_multi) {
            tr.diagnostics.push_back("cycle " + std::to_string(k) + ": " + std::to_string(s.crossings) +
                                     " comparator crossings bracketed, first one taken");
            warned_multi = true;
        }
        if (s.clamped) {
            tr.diagnostics.push_back("cycle " + std::to_string(k) + ": event held to the clock edge");
        }
        if (opt.dense_per_segment > 1) {
            detail::push_dense(tr.samples, m.leading_segment(), x, t, s.t_lead, opt.dense_per_segment, k);
        }
        if (s.t_lead > 0.0 && s.t_event > 0.0) {
            tr.samples.push_back({t + s.t_lead, s.x_mid, k, detail::edge_after_leading(kind)});
        }
        if (opt.dense_per_segment > 1) {
            detail::push_dense(tr.samples, m.event_segment(), s.x_mid, t + s.t_lead, s.t_event,
                               opt.dense_per_segment, k);
        }
        t += s.t_lead + s.t_event;
        if (t > tr.samples.back().t) tr.samples.push_back({t, s.x_next, k, detail::edge_after_event(kind)});
        tr.cycle_edges.push_back({k, t, s.x_next, s.t_event, s.t_lead, s.clamped});

        if (!(s.x_next.norm() <= opt.divergence_norm)) {
            throw Error(ErrorCode::divergence, "state norm exceeded " + std::to_string(opt.divergence_norm) +
                                                   " in cycle " + std::to_string(k));
        }
        tr.final_cycle_delta = (s.x_next - x).norm();
        quiet = tr.final_cycle_delta < opt.steady_tol * (1.0 + s.x_next.norm()) ? quiet + 1 : 0;
        x = s.x_next;
        prev = s.t_event;
        if (quiet >= opt.steady_cycles) {
            tr.converged = true;
            if (opt.stop_when_converged) break;
        }
    }
    return tr;
}

/// Sampled-state map x_k -> x_{k+1} with the event solved by the simulator.
/// For fixed-frequency logics the previous event duration is recovered from
/// the event relation at edge k, T_k = (K x_k - vc) / Se, which needs Se > 0.
[[nodiscard]] inline std::function<Vector(const Vector&)> event_resolved_map(const ConverterModel& m, Real vc,
                                                                             const SimOptions& opt = {}) {
    const bool ff = is_fixed_frequency(m.pwm.kind);
    if (ff && !(m.comparator.Se > 0.0)) throw Error(ErrorCode::uncompensated_modulator);
    return [m, vc, opt, ff](const Vector& x) {
        const Real prev = ff ? ((m.comparator.K * x)(0) - vc) / m.comparator.Se : 0.0;
        return step_cycle(m, x, prev, vc, opt).x_next;
    };
}

/// Map on z = [x; T_prev] -> [x_next; T_event]; well defined for any Se >= 0.
[[nodiscard]] inline std::function<Vector(const Vector&)> timing_augmented_map(const ConverterModel& m, Real vc,
                                                                               const SimOptions& opt = {}) {
    return [m, vc, opt](const Vector& z) {
        const Index n = m.dim();
        const CycleStep s = step_cycle(m, z.head(n), z(n), vc, opt);
        Vector out(n + 1);
        out.head(n) = s.x_next;
        out(n) = s.t_event;
        return out;
    };
}

/// Central-difference Jacobian; column i uses step rel_step * max(|x_i|, scale_i).
/// scale defaults to max |x_j| so near-zero components still get a usable step.
[[nodiscard]] inline Matrix fd_jacobian(const std::function<Vector(const Vector&)>& map, const Vector& x_star,
                                        Real rel_step = 1e-6, std::optional<Vector> scale = std::nullopt) {
    const Index n = x_star.size();
    const Vector sc = scale.value_or(Vector::Constant(n, std::max(x_star.cwiseAbs().maxCoeff(), 1e-12)));
    Matrix J;
    for (Index i = 0; i < n; ++i) {
        const Real h = rel_step * std::max(std::abs(x_star(i)), sc(i));
        Vector xp = x_star, xm = x_star;
        xp(i) += h;
        xm(i) -= h;
        Vector fp, fm;
        try {
            fp = map(xp);
            fm = map(xm);
        } catch (const Error& e) {
            throw Error(ErrorCode::stencil_discontinuity, "column " + std::to_string(i) + ": " + e.what());
        }
        if (J.size() == 0) J = Matrix::Zero(fp.size(), n);
        J.col(i) = (fp - fm) / (2.0 * h);
    }
    return J;
}

struct InjectionOptions {
    Real amplitude = 0.0;          // 0 selects 1e-4 * |vc_nominal|
    std::size_t warmup = 200;
    Real min_signal_periods = 4.0;
    std::size_t min_cycles = 256;
    Real max_fit_residual = 0.05;  // relative RMS residual of the sine fit
    SimOptions sim;
};

struct InjectionResult {
    Complex gain;
    std::size_t cycles = 0;
    Real fit_residual = 0.0;
};

/// Small-signal control-to-output gain measured by injecting
/// vc_k = vc + a sin(w k) at the sampling edges, w = 2 pi f T_cycle.
/// After the warm-up the output samples C_phys x_k are fitted with
/// c0 + p cos(w k) + q sin(w k) by least squares, which is the single-bin
/// correlation made exact for a record that is not a whole number of periods.
[[nodiscard]] inline InjectionResult measure_frequency_response(const ConverterModel& m,
                                                                const PeriodicOperatingPoint& op, Real f_hz,
                                                                const InjectionOptions& opt = {}) {
    const Real T = op.period();
    if (!(f_hz > 0.0 && f_hz < 0.5 / T)) {
        throw Error(ErrorCode::invalid_parameter, "injection frequency must lie in (0, 0.5 / T_cycle)");
    }
    const Real vc = m.comparator.vc_nominal;
    const Real amp = opt.amplitude > 0.0 ? opt.amplitude : 1e-4 * std::max(std::abs(vc), 1e-12);
    const Real w = 2.0 * M_PI * f_hz * T;
    const auto N = std::max<std::size_t>(opt.min_cycles,
                                         static_cast<std::size_t>(std::ceil(opt.min_signal_periods / (f_hz * T))));

    const ControlSequence vc_fn = [&](std::size_t k) { return vc + amp * std::sin(w * static_cast<Real>(k)); };
    SimStart start{op.x_star, event_duration(op, m.pwm.kind)};
    SimOptions sim = opt.sim;
    sim.stop_when_converged = false;
    const SimulationTrace tr = simulate_cycles(m, vc_fn, opt.warmup + N, start, sim);

    Matrix X(static_cast<Index>(N), 3);
    Vector y(static_cast<Index>(N));
    for (std::size_t i = 0; i < N; ++i) {
        const std::size_t k = opt.warmup + 1 + i;
        const auto r = static_cast<Index>(i);
        X(r, 0) = 1.0;
        X(r, 1) = std::cos(w * static_cast<Real>(k));
        X(r, 2) = std::sin(w * static_cast<Real>(k));
        y(r) = (m.C_phys * tr.cycle_edges[k].x)(0);
    }
    const Vector c = X.colPivHouseholderQr().solve(y);
    const Real p = c(1), q = c(2);
    const Real ampl_out = std::hypot(p, q);
    const Real rms = (y - X * c).norm() / std::sqrt(static_cast<Real>(N));
    InjectionResult res;
    res.cycles = N;
    res.fit_residual = ampl_out > 0.0 ? rms / (ampl_out / std::sqrt(2.0)) : INFINITY;
    if (!(res.fit_residual < opt.max_fit_residual)) {
        throw Error(ErrorCode::no_small_signal_regime,
                    "sine fit residual " + std::to_string(res.fit_residual) + " at f = " + std::to_string(f_hz));
    }
    // y_k = Re{(p - j q) e^{j w k}}, u_k = Re{-j a e^{j w k}}.
    res.gain = Complex(p, -q) / Complex(0.0, -amp);
    return res;
}

struct PeriodTwoReport {
    bool period_two = false;
    Real cluster_gap = 0.0;
    Real intra_spread = 0.0;
};

/// Splits the sampled states into even and odd cycles and compares the
/// distance between the two centroids with the scatter around them.
[[nodiscard]] inline PeriodTwoReport detect_period_two(std::span<const Vector> states, Real ratio = 100.0) {
    PeriodTwoReport r;
    if (states.size() < 4) return r;
    const Index n = states.front().size();
    Vector ce = Vector::Zero(n), co = Vector::Zero(n);
    std::size_t ne = 0, no = 0;
    for (std::size_t i = 0; i < states.size(); ++i) {
        if (i % 2 == 0) {
            ce += states[i];
            ++ne;
        } else {
            co += states[i];
            ++no;
        }
    }
    ce /= static_cast<Real>(ne);
    co /= static_cast<Real>(no);
    r.cluster_gap = (ce - co).norm();
    Real scale = 0.0;
    for (std::size_t i = 0; i < states.size(); ++i) {
        r.intra_spread = std::max(r.intra_spread, (states[i] - (i % 2 == 0 ? ce : co)).norm());
        scale = std::max(scale, states[i].norm());
    }
    r.period_two = r.cluster_gap > ratio * r.intra_spread && r.cluster_gap > 1e-9 * scale;
    return r;
}

}  // namespace pwmsd
