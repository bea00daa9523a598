#pragma once

#include "pwmsd/segment.hpp"

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace pwmsd {

/// Comparator: the switching event fires when K x = vc + Se * dT, dT being
/// the elapsed time of the event-determined segment.
struct ComparatorSpec {
    RowVector K;
    Real Se = 0.0;
    Real vc_nominal = 0.0;
};

enum class PwmKind { cot, coft, ff_trailing, ff_leading };

[[nodiscard]] constexpr std::string_view to_string(PwmKind kind) noexcept {
    switch (kind) {
    case PwmKind::cot: return "COT";
    case PwmKind::coft: return "COFT";
    case PwmKind::ff_trailing: return "FF_TRAILING";
    case PwmKind::ff_leading: return "FF_LEADING";
    }
    return "?";
}

[[nodiscard]] inline std::optional<PwmKind> parse_pwm_kind(std::string_view s) {
    if (s == "COT") return PwmKind::cot;
    if (s == "COFT") return PwmKind::coft;
    if (s == "FF_TRAILING") return PwmKind::ff_trailing;
    if (s == "FF_LEADING") return PwmKind::ff_leading;
    return std::nullopt;
}

/// fixed_duration is T_on for COT, T_off for COFT and the switching period
/// T_s for both fixed-frequency kinds.
struct PwmLogic {
    PwmKind kind = PwmKind::cot;
    Real fixed_duration = 0.0;
};

[[nodiscard]] constexpr bool is_fixed_frequency(PwmKind kind) noexcept {
    return kind == PwmKind::ff_trailing || kind == PwmKind::ff_leading;
}

/// True when the comparator event ends the on segment (peak-type edge).
[[nodiscard]] constexpr bool event_ends_on_segment(PwmKind kind) noexcept {
    return kind == PwmKind::coft || kind == PwmKind::ff_trailing;
}

/// Sampling edge name used in traces: valley (turn-on) or peak (turn-off).
[[nodiscard]] constexpr std::string_view sampling_edge(PwmKind kind) noexcept {
    return event_ends_on_segment(kind) ? "peak" : "valley";
}

struct ConverterModel {
    PwlSegment on_segment;
    PwlSegment off_segment;
    ComparatorSpec comparator;
    PwmLogic pwm;
    RowVector C_phys;
    std::vector<std::string> state_labels;
    std::string description;

    [[nodiscard]] Index dim() const noexcept { return on_segment.dim(); }

    /// Segment that opens a sampled cycle (fixed, or the clock complement for FF).
    [[nodiscard]] const PwlSegment& leading_segment() const noexcept {
        return event_ends_on_segment(pwm.kind) ? off_segment : on_segment;
    }
    /// Segment whose duration is set by the comparator.
    [[nodiscard]] const PwlSegment& event_segment() const noexcept {
        return event_ends_on_segment(pwm.kind) ? on_segment : off_segment;
    }
};

/// Duration of the leading segment given the previous event duration.
/// For COT/COFT this is the fixed duration; for FF it is T_s - previous.
[[nodiscard]] inline Real leading_duration(const PwmLogic& pwm, Real previous_event_duration) noexcept {
    return is_fixed_frequency(pwm.kind) ? pwm.fixed_duration - previous_event_duration : pwm.fixed_duration;
}

/// Event-determined duration that yields duty ratio D = T_on / (T_on + T_off).
[[nodiscard]] inline Real event_duration_for_duty(const PwmLogic& pwm, Real duty) {
    if (!(duty > 0.0 && duty < 1.0)) {
        throw Error(ErrorCode::invalid_parameter, "duty ratio must lie in (0, 1)");
    }
    const Real t = pwm.fixed_duration;
    switch (pwm.kind) {
    case PwmKind::cot: return t * (1.0 - duty) / duty;
    case PwmKind::coft: return t * duty / (1.0 - duty);
    case PwmKind::ff_trailing: return duty * t;
    case PwmKind::ff_leading: return (1.0 - duty) * t;
    }
    return t;
}

struct BuckParams {
    Real Vin = 12.0;
    Real L_f = 10e-6;
    Real C_f = 100e-6;
    Real R = 1.0;
    Real R_dcr = 0.0;
    Real R_esr = 0.0;
};

/// Buck power stage with state x = [i_L, v_C] and input U = [Vin].
///
/// With inductor DCR and capacitor ESR the output node obeys
/// v_o = v_C + R_esr (i_L - v_o / R), which gives the output row
/// C_phys = [R R_esr / (R + R_esr), R / (R + R_esr)]. For the ideal
/// case this reduces to v_o = v_C and A_on = A_off.
[[nodiscard]] inline ConverterModel build_buck(const BuckParams& p, PwmLogic pwm, ComparatorSpec comparator) {
    auto require = [](bool ok, const char* what) {
        if (!ok) throw Error(ErrorCode::invalid_parameter, what);
    };
    require(std::isfinite(p.Vin), "Vin must be finite");
    require(p.L_f > 0.0 && std::isfinite(p.L_f), "L_f must be > 0");
    require(p.C_f > 0.0 && std::isfinite(p.C_f), "C_f must be > 0");
    require(p.R > 0.0 && std::isfinite(p.R), "R must be > 0");
    require(p.R_dcr >= 0.0 && std::isfinite(p.R_dcr), "R_dcr must be >= 0");
    require(p.R_esr >= 0.0 && std::isfinite(p.R_esr), "R_esr must be >= 0");
    require(pwm.fixed_duration > 0.0, "pwm fixed_duration must be > 0");

    const Real Rt = p.R + p.R_esr;
    const Real r_par = p.R * p.R_esr / Rt;  // R || R_esr

    Matrix A(2, 2);
    A << -(p.R_dcr + r_par) / p.L_f, -(p.R / Rt) / p.L_f,
         (p.R / Rt) / p.C_f,         -1.0 / (Rt * p.C_f);

    Matrix B_on(2, 1);
    B_on << 1.0 / p.L_f, 0.0;
    Vector U(1);
    U << p.Vin;

    ConverterModel m;
    m.on_segment = {A, B_on, U, "on"};
    m.off_segment = {A, Matrix::Zero(2, 1), U, "off"};
    m.comparator = std::move(comparator);
    m.pwm = pwm;
    m.C_phys = RowVector(2);
    m.C_phys << r_par, p.R / Rt;
    m.state_labels = {"i_L", "v_C"};
    m.description = "buck: x = [i_L, v_C], U = [Vin], v_o = C_phys x (load/ESR divider)";
    return m;
}

/// Current-sense comparator row on the inductor current (state 0).
///
/// The sign of K is chosen so that the compared quantity moves against the
/// rising threshold vc + Se dT. A positive Se then acts as a stabilising
/// compensation ramp for both peak- and valley-type events.
[[nodiscard]] inline ComparatorSpec current_mode_comparator(Index n, PwmKind kind, Real R_sense, Real Se,
                                                            Real vc = 0.0) {
    ComparatorSpec c;
    c.K = RowVector::Zero(n);
    c.K(0) = event_ends_on_segment(kind) ? -R_sense : R_sense;
    c.Se = Se;
    c.vc_nominal = vc;
    return c;
}

/// One diagnostic per violated invariant; empty when the model is consistent.
[[nodiscard]] inline std::vector<std::string> validate(const ConverterModel& m) {
    std::vector<std::string> out;
    const Index n = m.on_segment.A.rows();
    auto check_segment = [&](const PwlSegment& s, const char* name) {
        if (s.A.rows() != s.A.cols()) out.push_back(std::string(name) + " segment A is not square");
        if (s.A.rows() != n) out.push_back(std::string(name) + " segment state dimension mismatch");
        if (s.B.rows() != s.A.rows()) out.push_back(std::string(name) + " segment B row count mismatch");
        if (s.B.cols() != s.U.size()) out.push_back(std::string(name) + " segment B/U input dimension mismatch");
        if (!s.A.allFinite() || !s.B.allFinite() || !s.U.allFinite())
            out.push_back(std::string(name) + " segment has non-finite entries");
    };
    check_segment(m.on_segment, "on");
    check_segment(m.off_segment, "off");
    if (m.on_segment.U.size() != m.off_segment.U.size())
        out.push_back("on/off segments have different input dimensions");
    if (m.comparator.K.size() != n) out.push_back("comparator row K dimension mismatch");
    else if (m.comparator.K.isZero(0.0)) out.push_back("comparator row K is zero");
    if (!(m.comparator.Se >= 0.0)) out.push_back("comparator ramp Se must be >= 0");
    if (!std::isfinite(m.comparator.vc_nominal)) out.push_back("comparator vc_nominal is not finite");
    if (!(m.pwm.fixed_duration > 0.0)) out.push_back("pwm fixed_duration must be > 0");
    if (m.C_phys.size() != n) out.push_back("C_phys dimension mismatch");
    else if (m.C_phys.isZero(0.0)) out.push_back("C_phys is zero");
    if (!m.state_labels.empty() && static_cast<Index>(m.state_labels.size()) != n)
        out.push_back("state_labels count does not match state dimension");
    return out;
}

}  // namespace pwmsd
