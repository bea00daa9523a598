#pragma once

// Edge-time perturbation to equivalent duty perturbation.
//
// Translation-type logics (COT/COFT) move a whole pulse of width T_w by dt_n;
// fixed-frequency logics move only the free edge while the clock pins the
// other one.

#include "pwmsd/core.hpp"

#include <algorithm>
#include <cmath>
#include <utility>
#include <span>
#include <string>
#include <vector>

namespace pwmsd {

enum class DutyKind { translation, ff_trailing_edge, ff_leading_edge };

struct DutyOperatorSpec {
    DutyKind kind = DutyKind::translation;
    Real T_s = 0.0;
    Real T_w = 0.0;  // pulse width (translation) or nominal free-edge position (FF, optional)
};

inline void validate_duty_spec(const DutyOperatorSpec& spec) {
    if (!(spec.T_s > 0.0)) throw Error(ErrorCode::invalid_parameter, "T_s must be > 0");
    if (spec.kind == DutyKind::translation && !(spec.T_w > 0.0 && spec.T_w < spec.T_s)) {
        throw Error(ErrorCode::invalid_parameter, "translation operator needs 0 < T_w < T_s");
    }
}

/// d_hat(s) / dt(s).
///
/// Translation: -(1/T_s) (1 - e^{-s T_w}) / (1 - e^{-s T_s}), with the
/// removable singularity at s = 0 replaced by its limit -T_w / T_s^2.
/// Fixed frequency: +1/T_s (trailing edge) and -1/T_s (leading edge).
[[nodiscard]] inline Complex duty_gain(const DutyOperatorSpec& spec, Complex s) {
    validate_duty_spec(spec);
    const Real Ts = spec.T_s;
    switch (spec.kind) {
    case DutyKind::ff_trailing_edge: return {1.0 / Ts, 0.0};
    case DutyKind::ff_leading_edge: return {-1.0 / Ts, 0.0};
    case DutyKind::translation: break;
    }
    const Real Tw = spec.T_w;
    if (s == Complex(0.0, 0.0)) return {-Tw / (Ts * Ts), 0.0};

    // Comb poles at s = j 2 pi k / T_s, k != 0.
    const Real k = s.imag() * Ts / (2.0 * M_PI);
    if (std::abs(s.real()) * Ts < 1e-12 && std::abs(k - std::round(k)) < 1e-9 && std::round(k) != 0.0) {
        throw Error(ErrorCode::translation_operator_pole, "s = j*2*pi*" + std::to_string(std::round(k)) + "/T_s");
    }
    // 1 - e^{-x} = -expm1(-x) keeps precision near s = 0.
    auto one_minus_exp = [](Complex x) {
        const Complex mx = -x;
        if (std::abs(mx) < 1e-5) {
            return -(mx + mx * mx / 2.0 + mx * mx * mx / 6.0);
        }
        return 1.0 - std::exp(mx);
    };
    return -(1.0 / Ts) * one_minus_exp(s * Tw) / one_minus_exp(s * Ts);
}

/// Exact equivalent-duty waveform produced by a per-cycle edge-shift sequence.
///
/// Translation: the waveform is the displaced pulse area normalised by the
/// period, d(t) = (1/T_s) int_{-inf}^{t} (q - q*) dtau, which is piecewise
/// linear. Fixed frequency: the per-window duty d[n] = (1/T_s) int q over
/// [n T_s, (n+1) T_s) held over the window. d_hat holds per-cycle window averages.
class DutyWaveform {
public:
    DutyWaveform(DutyOperatorSpec spec, std::vector<Real> shifts) : spec_(spec), shifts_(std::move(shifts)) {}

    [[nodiscard]] const DutyOperatorSpec& spec() const noexcept { return spec_; }
    [[nodiscard]] std::size_t cycles() const noexcept { return shifts_.size(); }
    [[nodiscard]] Real duration() const noexcept { return spec_.T_s * static_cast<Real>(shifts_.size()); }

    /// Waveform value at time t in [0, cycles * T_s).
    [[nodiscard]] Real value(Real t) const {
        const Real Ts = spec_.T_s;
        const auto n = static_cast<long>(std::floor(t / Ts));
        if (spec_.kind != DutyKind::translation) {
            if (n < 0 || n >= static_cast<long>(shifts_.size())) return 0.0;
            const Real dt = shifts_[static_cast<std::size_t>(n)];
            return spec_.kind == DutyKind::ff_trailing_edge ? dt / Ts : -dt / Ts;
        }
        // Only pulses n-1, n, n+1 can overlap the current window for valid shifts.
        Real area = 0.0;
        for (long m = n - 1; m <= n + 1; ++m) area += displaced_area(m, t);
        return area / Ts;
    }

    /// Points where the waveform changes slope or jumps, sorted, inside [0, duration()].
    [[nodiscard]] std::vector<Real> breakpoints() const {
        const Real Ts = spec_.T_s;
        std::vector<Real> bp;
        for (std::size_t n = 0; n <= shifts_.size(); ++n) bp.push_back(static_cast<Real>(n) * Ts);
        if (spec_.kind == DutyKind::translation) {
            for (std::size_t n = 0; n < shifts_.size(); ++n) {
                const Real t0 = static_cast<Real>(n) * Ts;
                for (Real t : {t0 + shifts_[n], t0 + spec_.T_w, t0 + spec_.T_w + shifts_[n]}) {
                    if (t > 0.0 && t < duration()) bp.push_back(t);
                }
            }
        }
        std::sort(bp.begin(), bp.end());
        bp.erase(std::unique(bp.begin(), bp.end()), bp.end());
        return bp;
    }

    /// End values of the linear piece [a, b] between adjacent breakpoints,
    /// read from interior points so that jumps at a or b do not leak in.
    [[nodiscard]] std::pair<Real, Real> piece_ends(Real a, Real b) const {
        const Real t1 = a + 0.25 * (b - a), t2 = a + 0.75 * (b - a);
        const Real f1 = value(t1), f2 = value(t2);
        const Real k = (f2 - f1) / (t2 - t1);
        return {f1 - k * (t1 - a), f2 + k * (b - t2)};
    }

private:
    [[nodiscard]] Real shift(long m) const {
        return (m < 0 || m >= static_cast<long>(shifts_.size())) ? 0.0 : shifts_[static_cast<std::size_t>(m)];
    }

    // Area of shifted pulse m up to t minus area of the nominal pulse m up to t.
    [[nodiscard]] Real displaced_area(long m, Real t) const {
        const Real start = static_cast<Real>(m) * spec_.T_s;
        const Real w = spec_.T_w;
        auto clamp_area = [w](Real x) { return std::clamp(x, 0.0, w); };
        return clamp_area(t - start - shift(m)) - clamp_area(t - start);
    }

    DutyOperatorSpec spec_;
    std::vector<Real> shifts_;
};

struct DutySequence {
    std::vector<Real> d_hat;
    std::vector<std::string> warnings;
};

namespace detail {

inline void check_edge_order(const DutyOperatorSpec& spec, std::span<const Real> shifts) {
    const Real Ts = spec.T_s;
    for (std::size_t n = 0; n < shifts.size(); ++n) {
        const Real dt = shifts[n];
        if (!std::isfinite(dt)) throw Error(ErrorCode::invalid_parameter, "non-finite edge shift");
        if (spec.kind == DutyKind::translation) {
            const Real next = n + 1 < shifts.size() ? shifts[n + 1] : 0.0;
            const Real prev = n > 0 ? shifts[n - 1] : 0.0;
            // Pulse n must end before pulse n+1 starts and stay within one window edge.
            if (dt + spec.T_w >= Ts + next || prev + spec.T_w >= Ts + dt || std::abs(dt) >= Ts - spec.T_w) {
                throw Error(ErrorCode::edge_collision, "cycle " + std::to_string(n));
            }
        } else {
            const Real nominal = (spec.T_w > 0.0 && spec.T_w < Ts) ? spec.T_w : 0.5 * Ts;
            if (!(nominal + dt > 0.0 && nominal + dt < Ts)) {
                throw Error(ErrorCode::edge_collision, "free edge leaves its period in cycle " + std::to_string(n));
            }
        }
    }
}

}  // namespace detail

[[nodiscard]] inline DutyWaveform duty_waveform(const DutyOperatorSpec& spec, std::span<const Real> edge_shifts) {
    validate_duty_spec(spec);
    detail::check_edge_order(spec, edge_shifts);
    return DutyWaveform(spec, std::vector<Real>(edge_shifts.begin(), edge_shifts.end()));
}

/// Per-cycle duty perturbations from per-cycle edge shifts (exact overlap integration).
[[nodiscard]] inline DutySequence duty_sequence_from_edges(const DutyOperatorSpec& spec,
                                                           std::span<const Real> edge_shifts) {
    const DutyWaveform w = duty_waveform(spec, edge_shifts);
    const Real Ts = spec.T_s;
    DutySequence out;
    out.d_hat.reserve(edge_shifts.size());

    const Real nominal = (spec.T_w > 0.0 && spec.T_w < Ts) ? spec.T_w : 0.5 * Ts;
    const Real margin = std::min(nominal, Ts - nominal);
    const Real max_shift = edge_shifts.empty()
                               ? 0.0
                               : std::abs(*std::max_element(edge_shifts.begin(), edge_shifts.end(),
                                                            [](Real a, Real b) { return std::abs(a) < std::abs(b); }));
    if (max_shift > 0.01 * margin) {
        out.warnings.push_back("edge shift exceeds 1% of the pulse margin; first-order mapping may not hold");
    }

    const auto bp = w.breakpoints();
    for (std::size_t n = 0; n < edge_shifts.size(); ++n) {
        if (spec.kind != DutyKind::translation) {
            out.d_hat.push_back(w.value((static_cast<Real>(n) + 0.5) * Ts));
            continue;
        }
        // Window average of a piecewise-linear signal: trapezoids between breakpoints.
        const Real a = static_cast<Real>(n) * Ts;
        const Real b = a + Ts;
        Real integral = 0.0;
        Real left = a;
        for (auto it = std::upper_bound(bp.begin(), bp.end(), a);; ++it) {
            const Real right = (it == bp.end() || *it > b) ? b : *it;
            if (right > left) {
                const auto [fl, fr] = w.piece_ends(left, right);
                integral += 0.5 * (right - left) * (fl + fr);
            }
            left = right;
            if (right >= b) break;
        }
        out.d_hat.push_back(integral / Ts);
    }
    return out;
}

/// Ratio of the Fourier integral of the exact duty waveform to that of the
/// zero-order-hold reconstruction of the shift sequence, both taken over the
/// whole record at angular frequency w (rad/s). This is the quantity that
/// duty_gain(j w) predicts; w should put a whole number of periods in the record.
[[nodiscard]] inline Complex duty_response_from_edges(const DutyOperatorSpec& spec, std::span<const Real> edge_shifts,
                                                      Real w) {
    if (!(w > 0.0)) throw Error(ErrorCode::invalid_parameter, "angular frequency must be > 0");
    const DutyWaveform wave = duty_waveform(spec, edge_shifts);
    const Complex jw(0.0, w);
    auto e = [&](Real t) { return std::exp(-jw * t); };

    // Piecewise-linear waveform: exact integral of (fa + k (t - a)) e^{-jwt} on each piece.
    const auto bp = wave.breakpoints();
    Complex num = 0.0;
    for (std::size_t i = 0; i + 1 < bp.size(); ++i) {
        const Real a = bp[i], b = bp[i + 1];
        const auto [fa, fb] = wave.piece_ends(a, b);
        const Real k = (fb - fa) / (b - a);
        num += (fb * e(b) - fa * e(a)) / (-jw) - k * (e(b) - e(a)) / (jw * jw);
    }
    Complex den = 0.0;
    const Real Ts = spec.T_s;
    for (std::size_t n = 0; n < edge_shifts.size(); ++n) den += edge_shifts[n] * e(static_cast<Real>(n) * Ts);
    den *= (1.0 - e(Ts)) / jw;
    return num / den;
}

}  // namespace pwmsd
