#pragma once

#include "pwmsd/converter.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace pwmsd {

struct PeriodicOperatingPoint {
    Vector x_star;                       // sampled state at the logic's sampling edge
    Real T_on_star = 0.0;
    Real T_off_star = 0.0;
    std::vector<Vector> boundary_states; // after the leading segment, after the event segment
    Real residual_norm = 0.0;
    int iterations = 0;

    [[nodiscard]] Real period() const noexcept { return T_on_star + T_off_star; }
};

[[nodiscard]] inline Real event_duration(const PeriodicOperatingPoint& op, PwmKind kind) noexcept {
    return event_ends_on_segment(kind) ? op.T_on_star : op.T_off_star;
}

[[nodiscard]] inline Real leading_duration(const PeriodicOperatingPoint& op, PwmKind kind) noexcept {
    return event_ends_on_segment(kind) ? op.T_off_star : op.T_on_star;
}

struct SolverOptions {
    int max_iter = 50;
    int max_halvings = 20;
    Real abs_tol = 1e-12;      // scaled residual
    Real rel_tol = 1e-9;       // relative state step
    Real accept_residual = 1e-9;
    Real duration_cap_factor = 50.0;  // COT/COFT: cap = factor * fixed duration
    int scan_points = 96;
    Real max_condition = 1e12;
};

/// One sampled cycle: leading segment for t_lead, then the event segment for t_event.
struct CycleEvaluation {
    Vector x_mid;
    Vector x_next;
    Propagator lead;
    Propagator event;
};

[[nodiscard]] inline CycleEvaluation evaluate_cycle(const ConverterModel& m, const Vector& x, Real t_lead,
                                                    Real t_event) {
    CycleEvaluation c;
    c.lead = propagator(m.leading_segment(), t_lead);
    c.event = propagator(m.event_segment(), t_event);
    c.x_mid = advance(c.lead, x);
    c.x_next = advance(c.event, c.x_mid);
    return c;
}

/// Fixed point of the composed cycle map for given durations:
/// (I - Pi) X* = sum_i (Phi_n ... Phi_{i+1}) Gamma_i + Gamma_n.
[[nodiscard]] inline Vector fixed_point_fixed_timing(std::span<const TimedSegment> segments,
                                                     Real max_condition = 1e12) {
    if (segments.empty()) {
        throw Error(ErrorCode::invalid_parameter, "fixed point needs at least one segment");
    }
    const Index n = segments.front().segment.dim();
    const CompositionResult c = compose(segments, Vector::Zero(n));
    const Matrix M = Matrix::Identity(n, n) - c.total_phi;
    Eigen::JacobiSVD<Matrix> svd(M);
    const auto& sv = svd.singularValues();
    const Real smax = sv(0);
    const Real smin = sv(sv.size() - 1);
    if (!(smin > 0.0) || smax / smin > max_condition) {
        throw Error(ErrorCode::marginal_periodic_solution,
                    "condition number of (I - Pi) is " + std::to_string(smin > 0.0 ? smax / smin : INFINITY));
    }
    return M.fullPivLu().solve(c.total_forcing);
}

namespace detail {

inline Vector fixed_point_for_event_duration(const ConverterModel& m, Real t_event, Real max_condition) {
    const std::array<TimedSegment, 2> cyc{
        TimedSegment{m.leading_segment(), leading_duration(m.pwm, t_event)},
        TimedSegment{m.event_segment(), t_event}};
    return fixed_point_fixed_timing(cyc, max_condition);
}

inline Real duration_cap(const ConverterModel& m, const SolverOptions& opt) {
    return is_fixed_frequency(m.pwm.kind) ? m.pwm.fixed_duration
                                          : opt.duration_cap_factor * m.pwm.fixed_duration;
}

}  // namespace detail

/// Control voltage that places the operating point at the requested event
/// duration: vc = K x*(T) - Se T with x*(T) the fixed-timing fixed point.
[[nodiscard]] inline Real setpoint_for_event_duration(const ConverterModel& m, Real t_event) {
    const Vector x = detail::fixed_point_for_event_duration(m, t_event, 1e12);
    return (m.comparator.K * x)(0) - m.comparator.Se * t_event;
}

[[nodiscard]] inline Real setpoint_for_duty(const ConverterModel& m, Real duty) {
    return setpoint_for_event_duration(m, event_duration_for_duty(m.pwm, duty));
}

/// Copy of the model with vc_nominal set for the requested duty ratio.
[[nodiscard]] inline ConverterModel with_duty(ConverterModel m, Real duty) {
    m.comparator.vc_nominal = setpoint_for_duty(m, duty);
    return m;
}

/// Periodic operating point of the closed comparator loop.
///
/// Unknowns are the sampled state and the event-determined duration. The
/// residual stacks cycle closure x_next(x, T) - x with the event equation
/// K x - vc - Se T, and Newton uses the analytic Jacobian
///     [[Phi_cycle - I, dx_next/dT], [K, -Se]].
/// The starting point comes from scanning the event residual along the
/// fixed-timing fixed points x*(T).
[[nodiscard]] inline PeriodicOperatingPoint solve_periodic(const ConverterModel& m, const SolverOptions& opt = {}) {
    if (const auto diags = validate(m); !diags.empty()) {
        throw Error(ErrorCode::invalid_parameter, diags.front());
    }
    const auto& cmp = m.comparator;
    const Index n = m.dim();
    const bool ff = is_fixed_frequency(m.pwm.kind);
    const Real cap = detail::duration_cap(m, opt);

    auto event_residual = [&](Real t) {
        const Vector x = detail::fixed_point_for_event_duration(m, t, opt.max_condition);
        return (cmp.K * x)(0) - cmp.vc_nominal - cmp.Se * t;
    };

    // Scan for the first sign change of the event residual.
    std::vector<Real> grid(static_cast<std::size_t>(opt.scan_points));
    for (int j = 0; j < opt.scan_points; ++j) {
        const Real s = (j + 0.5) / opt.scan_points;
        grid[static_cast<std::size_t>(j)] = ff ? s * cap : cap * std::pow(1e-4, 1.0 - s);
    }
    Real lo = NAN, hi = NAN, g_lo = NAN;
    {
        Real prev_t = NAN, prev_g = NAN;
        for (Real t : grid) {
            Real g;
            try {
                g = event_residual(t);
            } catch (const Error&) {
                prev_t = NAN;
                continue;
            }
            if (std::isfinite(prev_t) && (prev_g == 0.0 || (prev_g < 0.0) != (g < 0.0))) {
                lo = prev_t;
                hi = t;
                g_lo = prev_g;
                break;
            }
            prev_t = t;
            prev_g = g;
        }
    }
    if (!std::isfinite(lo)) {
        throw Error(ErrorCode::pulse_skipping,
                    "comparator threshold not met by any periodic orbit with event duration in (0, " +
                        std::to_string(cap) + ")");
    }
    for (int k = 0; k < 40; ++k) {
        const Real mid = 0.5 * (lo + hi);
        const Real g = event_residual(mid);
        if ((g < 0.0) == (g_lo < 0.0)) {
            lo = mid;
            g_lo = g;
        } else {
            hi = mid;
        }
    }
    Real T = 0.5 * (lo + hi);
    Vector x = detail::fixed_point_for_event_duration(m, T, opt.max_condition);

    const Real sx = std::max(x.norm(), 1e-9);
    const Real sc = std::max({std::abs(cmp.vc_nominal), cmp.K.cwiseAbs().sum() * sx, 1e-300});

    auto residual = [&](const Vector& xs, Real t, CycleEvaluation* eval) {
        const CycleEvaluation c = evaluate_cycle(m, xs, leading_duration(m.pwm, t), t);
        Vector r(n + 1);
        r.head(n) = (c.x_next - xs) / sx;
        r(n) = ((cmp.K * xs)(0) - cmp.vc_nominal - cmp.Se * t) / sc;
        if (eval) *eval = c;
        return r;
    };

    CycleEvaluation eval;
    Vector r = residual(x, T, &eval);
    Real rn = r.norm();
    int iter = 0;
    bool stagnated = false;
    for (; iter < opt.max_iter && rn > opt.abs_tol && !stagnated; ++iter) {
        const PwlSegment& lead = m.leading_segment();
        const PwlSegment& evs = m.event_segment();
        // d x_next / d T_event, plus the clock-complement term for FF.
        Vector dT = evs.A * eval.event.phi * eval.x_mid + eval.event.phi * evs.forcing();
        if (ff) {
            dT -= eval.event.phi * (lead.A * eval.lead.phi * x + eval.lead.phi * lead.forcing());
        }
        Matrix J(n + 1, n + 1);
        J.topLeftCorner(n, n) = (eval.event.phi * eval.lead.phi - Matrix::Identity(n, n)) / sx;
        J.topRightCorner(n, 1) = dT / sx;
        J.bottomLeftCorner(1, n) = cmp.K / sc;
        J(n, n) = -cmp.Se / sc;
        const Vector step = J.fullPivLu().solve(-r);
        if (!step.allFinite()) break;

        Real lambda = 1.0;
        bool improved = false;
        for (int h = 0; h <= opt.max_halvings; ++h, lambda *= 0.5) {
            const Vector xt = x + lambda * step.head(n);
            const Real Tt = T + lambda * step(n);
            if (!(Tt > 0.0 && Tt < cap)) continue;
            CycleEvaluation et;
            Vector rt;
            try {
                rt = residual(xt, Tt, &et);
            } catch (const Error&) {
                continue;
            }
            if (rt.norm() < rn) {
                const Real rel_step = (lambda * step.head(n)).norm() / std::max(x.norm(), 1e-300);
                x = xt;
                T = Tt;
                r = rt;
                rn = rt.norm();
                eval = et;
                improved = true;
                // round-off floor reached
                stagnated = rel_step < opt.rel_tol * 1e-6 && rn < opt.accept_residual;
                break;
            }
        }
        if (!improved) break;
    }
    if (!(rn < opt.accept_residual)) {
        throw Error(ErrorCode::no_periodic_solution,
                    "Newton stopped with scaled residual " + std::to_string(rn));
    }
    if (!(T > 0.0 && T < cap)) {
        throw Error(ErrorCode::pulse_skipping, "event duration " + std::to_string(T) + " s");
    }

    PeriodicOperatingPoint op;
    op.x_star = x;
    const Real t_lead = leading_duration(m.pwm, T);
    if (event_ends_on_segment(m.pwm.kind)) {
        op.T_on_star = T;
        op.T_off_star = t_lead;
    } else {
        op.T_off_star = T;
        op.T_on_star = t_lead;
    }
    op.boundary_states = {eval.x_mid, eval.x_next};
    op.residual_norm = rn;
    op.iterations = iter;
    return op;
}

}  // namespace pwmsd
