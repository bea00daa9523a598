#pragma once

// Cross-checks of the analytic results against independent references:
// quadrature and a long-double Taylor exponential for the propagators,
// finite differences and the switching simulator for the cycle maps,
// sinusoidal injection for the transfer functions and dense least squares
// for the port projection.
//
// Each check returns its worst deviation next to the threshold it is held to.

#include "pwmsd/distillation.hpp"
#include "pwmsd/duty_mapping.hpp"
#include "pwmsd/sim_oracle.hpp"
#include "pwmsd/small_signal.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace pwmsd {

struct CheckResult {
    std::string name;
    Real deviation = 0.0;
    Real threshold = 0.0;
    bool passed = false;
    std::string detail;
};

[[nodiscard]] inline CheckResult make_check(std::string name, Real deviation, Real threshold,
                                            std::string detail = {}) {
    return {std::move(name), deviation, threshold, std::isfinite(deviation) && deviation <= threshold,
            std::move(detail)};
}

[[nodiscard]] inline CheckResult make_flag(std::string name, bool ok, std::string detail = {}) {
    return {std::move(name), ok ? 0.0 : 1.0, 0.0, ok, std::move(detail)};
}

[[nodiscard]] inline bool all_passed(std::span<const CheckResult> checks) {
    return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
}

namespace oracle {

using LMatrix = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;

/// e^M by scaling and squaring of a plain Taylor series in long double.
[[nodiscard]] inline Matrix expm_taylor(const Matrix& M) {
    const Index n = M.rows();
    LMatrix A = M.cast<long double>();
    const long double norm = A.cwiseAbs().colwise().sum().maxCoeff();
    int s = 0;
    if (norm > 0.25L) s = static_cast<int>(std::ceil(std::log2(norm / 0.25L)));
    A /= std::ldexp(1.0L, s);
    LMatrix term = LMatrix::Identity(n, n);
    LMatrix sum = term;
    for (int k = 1; k < 40; ++k) {
        term = term * A / static_cast<long double>(k);
        sum += term;
        if (term.cwiseAbs().maxCoeff() < 1e-22L * sum.cwiseAbs().maxCoeff()) break;
    }
    for (int i = 0; i < s; ++i) sum = sum * sum;
    return sum.cast<Real>();
}

/// int_0^T e^{A (T - tau)} b dtau, component by component with adaptive Gauss-Kronrod.
[[nodiscard]] inline Vector forced_response_quadrature(const Matrix& A, const Vector& b, Real T) {
    const Index n = A.rows();
    Vector out(n);
    for (Index i = 0; i < n; ++i) {
        auto f = [&](Real tau) { return (expm_taylor(A * (T - tau)) * b)(i); };
        out(i) = boost::math::quadrature::gauss_kronrod<Real, 31>::integrate(f, 0.0, T, 12, 1e-14);
    }
    return out;
}

/// Minimum of ||D - v C||_F over all column vectors v, by dense least squares on vec(D).
[[nodiscard]] inline Real rank_one_fit_residual(const Matrix& D, const RowVector& C) {
    const Index n = D.rows();
    const Index m = D.cols();
    // vec(v C) = (C^T kron I_n) v
    Matrix K = Matrix::Zero(n * m, n);
    for (Index j = 0; j < m; ++j) K.block(j * n, 0, n, n) = C(j) * Matrix::Identity(n, n);
    const Vector d = Eigen::Map<const Vector>(D.data(), n * m);
    const Vector v = K.colPivHouseholderQr().solve(d);
    return (d - K * v).norm();
}

}  // namespace oracle

/// Random segment with A entries in [-1, 1] and one or two inputs.
[[nodiscard]] inline PwlSegment random_segment(std::mt19937_64& rng, Index n) {
    std::uniform_real_distribution<Real> u(-1.0, 1.0);
    std::uniform_int_distribution<int> inputs(1, 2);
    const Index m = inputs(rng);
    PwlSegment s;
    s.A = Matrix::NullaryExpr(n, n, [&] { return u(rng); });
    s.B = Matrix::NullaryExpr(n, m, [&] { return u(rng); });
    s.U = Vector::NullaryExpr(m, [&] { return u(rng); });
    s.label = "random";
    return s;
}

// ---------------------------------------------------------------------------
// Propagators and composition

[[nodiscard]] inline std::vector<CheckResult> verify_propagators(std::uint64_t seed, int count = 100) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> dim(2, 4);
    std::uniform_real_distribution<Real> dur(0.05, 2.0);
    std::uniform_real_distribution<Real> unit(0.0, 1.0);

    Real quad = 0.0, expo = 0.0, semi_phi = 0.0, semi_gamma = 0.0, deriv = 0.0, ident = 0.0;
    for (int i = 0; i < count; ++i) {
        const PwlSegment s = random_segment(rng, dim(rng));
        const Real T = dur(rng);
        const Propagator p = propagator(s, T);
        quad = std::max(quad, relative_difference(p.gamma, oracle::forced_response_quadrature(s.A, s.forcing(), T)));
        expo = std::max(expo, relative_difference(p.phi, oracle::expm_taylor(s.A * T)));

        const Real span = 10.0 / s.A.norm();
        const Real T1 = span * unit(rng), T2 = span * unit(rng);
        const Propagator p1 = propagator(s, T1), p2 = propagator(s, T2), p12 = propagator(s, T1 + T2);
        semi_phi = std::max(semi_phi, relative_difference(p2.phi * p1.phi, p12.phi));
        semi_gamma = std::max(semi_gamma, relative_difference(Vector(p2.phi * p1.gamma + p2.gamma), p12.gamma));
    }
    // Fourth-order central differences over T for 2x2 and 4x4 segments.
    for (Index n : {Index{2}, Index{4}}) {
        for (int i = 0; i < count; ++i) {
            const PwlSegment s = random_segment(rng, n);
            const Real T = 0.1 + 1.9 * unit(rng);
            const Real h = std::sqrt(std::numeric_limits<Real>::epsilon()) * std::max(T, 1.0);
            const auto d = propagator_time_derivatives(s, T);
            const Propagator pm2 = propagator(s, T - 2 * h), pm1 = propagator(s, T - h);
            const Propagator pp1 = propagator(s, T + h), pp2 = propagator(s, T + 2 * h);
            const Matrix fd_phi = (pm2.phi - 8.0 * pm1.phi + 8.0 * pp1.phi - pp2.phi) / (12.0 * h);
            const Vector fd_gamma = (pm2.gamma - 8.0 * pm1.gamma + 8.0 * pp1.gamma - pp2.gamma) / (12.0 * h);
            deriv = std::max({deriv, relative_difference(d.dphi_dt, fd_phi), relative_difference(d.dgamma_dt, fd_gamma)});
        }
    }
    // Composition of copies of one segment equals one propagation over the summed duration.
    for (int i = 0; i < 20; ++i) {
        const PwlSegment s = random_segment(rng, dim(rng));
        std::vector<TimedSegment> list;
        Real total = 0.0;
        for (int k = 0; k < 2 + i % 4; ++k) {
            list.push_back({s, 0.5 * unit(rng)});
            total += list.back().duration;
        }
        const Vector x0 = Vector::Random(s.dim());
        const auto c = compose(list, x0);
        ident = std::max(ident, relative_difference(c.x_end, advance(propagator(s, total), x0)));
    }
    return {
        make_check("forced response vs adaptive quadrature", quad, 1e-10),
        make_check("state transition vs long-double Taylor exponential", expo, 1e-12),
        make_check("semigroup phi(T1+T2) = phi(T2) phi(T1)", semi_phi, 1e-10),
        make_check("forced-response semigroup", semi_gamma, 1e-10),
        make_check("time derivatives vs 4th-order differences", deriv, 1e-6),
        make_check("identical-segment composition", ident, 1e-12),
    };
}

[[nodiscard]] inline std::vector<CheckResult> verify_composition(std::uint64_t seed, int trials = 20) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<Real> dur(0.0, 1.0);
    Real phi_dev = 0.0, forcing_dev = 0.0, single = 0.0, zero_dur = 0.0, closure = 0.0;
    for (int t = 0; t < trials; ++t) {
        std::array<TimedSegment, 4> segs;
        std::array<Propagator, 4> p;
        for (std::size_t i = 0; i < 4; ++i) {
            segs[i] = {random_segment(rng, 3), dur(rng)};
            p[i] = propagator(segs[i].segment, segs[i].duration);
        }
        const Vector x0 = Vector::Random(3);
        const auto c = compose(segs, x0);
        // X4 = P4 P3 P2 P1 X0 + P4 P3 P2 G1 + P4 P3 G2 + P4 G3 + G4
        const Matrix Pi = p[3].phi * p[2].phi * p[1].phi * p[0].phi;
        const Vector F = p[3].phi * p[2].phi * p[1].phi * p[0].gamma + p[3].phi * p[2].phi * p[1].gamma +
                         p[3].phi * p[2].gamma + p[3].gamma;
        phi_dev = std::max(phi_dev, relative_difference(c.total_phi, Pi));
        forcing_dev = std::max({forcing_dev, relative_difference(c.total_forcing, F),
                                relative_difference(c.x_end, Vector(Pi * x0 + F))});

        const auto c1 = compose(std::span(segs.data(), 1), x0);
        single = std::max(single, relative_difference(c1.x_end, Vector(p[0].phi * x0 + p[0].gamma)));

        std::vector<TimedSegment> padded{{segs[1].segment, 0.0}, {segs[2].segment, 0.0}};
        padded.insert(padded.end(), segs.begin(), segs.end());
        zero_dur = std::max(zero_dur, relative_difference(compose(padded, x0).x_end, c.x_end));

        try {
            const Vector X = fixed_point_fixed_timing(segs);
            closure = std::max(closure, (compose(segs, X).x_end - X).norm() / (1.0 + X.norm()));
        } catch (const Error& e) {
            if (e.code() != ErrorCode::marginal_periodic_solution) throw;
        }
    }
    return {
        make_check("reverse product Phi4 Phi3 Phi2 Phi1", phi_dev, 1e-13),
        make_check("forcing expansion term by term", forcing_dev, 1e-13),
        make_check("single-segment update", single, 1e-15),
        make_check("zero-duration segments are transparent", zero_dur, 0.0),
        make_check("fixed point is cycle invariant", closure, 1e-10),
    };
}

// ---------------------------------------------------------------------------
// Cycle maps

/// x_{k+1} as a function of x_k, the current event duration and (FF) the previous one.
[[nodiscard]] inline Vector explicit_cycle_map(const ConverterModel& m, const Vector& x, Real t_event,
                                               Real t_prev) {
    return evaluate_cycle(m, x, leading_duration(m.pwm, t_prev), t_event).x_next;
}

[[nodiscard]] inline std::vector<CheckResult> verify_jacobian_blocks(const ConverterModel& m,
                                                                     const PeriodicOperatingPoint& op,
                                                                     Real threshold = 1e-4) {
    const PwmKind kind = m.pwm.kind;
    const Real Te = event_duration(op, kind);
    const JacobianBlocks b = jacobian_blocks(m, op);
    std::vector<CheckResult> out;

    const Matrix fd_phi = fd_jacobian([&](const Vector& x) { return explicit_cycle_map(m, x, Te, Te); }, op.x_star);
    out.push_back(make_check(std::string(to_string(kind)) + " phi_cycle vs finite differences",
                             relative_difference(b.phi_cycle, fd_phi), threshold));

    const Real h = 1e-6 * Te;
    const Vector fd_plus = (explicit_cycle_map(m, op.x_star, Te + h, Te) - explicit_cycle_map(m, op.x_star, Te - h, Te)) / (2 * h);
    out.push_back(make_check(std::string(to_string(kind)) + " gamma_plus vs finite differences",
                             relative_difference(b.gamma_plus, fd_plus), threshold));
    if (is_fixed_frequency(kind)) {
        const Vector fd_minus =
            (explicit_cycle_map(m, op.x_star, Te, Te + h) - explicit_cycle_map(m, op.x_star, Te, Te - h)) / (2 * h);
        out.push_back(make_check(std::string(to_string(kind)) + " gamma_minus vs finite differences",
                                 b.gamma_minus ? relative_difference(*b.gamma_minus, fd_minus) : INFINITY, threshold));
    } else {
        out.push_back(make_flag(std::string(to_string(kind)) + " gamma_minus absent", !b.gamma_minus.has_value()));
    }

    // Closed loop: the eliminated recursion against the simulator's event-resolved map.
    const LinearizedCycleMap map = linearized_map(m, b);
    const Matrix M = cycle_matrix(map);
    Matrix fd;
    if (map.timing_augmented) {
        Vector z(m.dim() + 1);
        z << op.x_star, Te;
        // The timing entry is in seconds, so it must not share the state's step scale.
        Vector scale = Vector::Constant(z.size(), std::max(op.x_star.cwiseAbs().maxCoeff(), 1e-12));
        scale(m.dim()) = Te;
        fd = fd_jacobian(timing_augmented_map(m, m.comparator.vc_nominal), z, 1e-6, scale);
    } else {
        fd = fd_jacobian(event_resolved_map(m, m.comparator.vc_nominal), op.x_star);
    }
    out.push_back(make_check(std::string(to_string(kind)) + " E^-1 G vs event-resolved simulator map",
                             (M - fd).operatorNorm() / std::max(fd.operatorNorm(), 1e-300), threshold));
    return out;
}

/// Randomized buck design with a current-sense comparator, duty in [0.3, 0.7].
[[nodiscard]] inline ConverterModel random_buck_design(std::mt19937_64& rng, PwmKind kind) {
    auto uni = [&](Real a, Real b) { return std::uniform_real_distribution<Real>(a, b)(rng); };
    BuckParams p;
    p.Vin = uni(8.0, 24.0);
    p.L_f = uni(4.7e-6, 47e-6);
    p.C_f = uni(47e-6, 470e-6);
    p.R = uni(0.5, 5.0);
    p.R_dcr = uni(0.0, 0.05);
    p.R_esr = uni(0.0, 0.02);
    const Real Ts = uni(5e-6, 20e-6);
    const Real D = uni(0.3, 0.7);
    const Real R_s = uni(0.05, 0.2);
    const Real Se = R_s * p.Vin / p.L_f * uni(0.2, 1.0);
    Real fixed = Ts;
    if (kind == PwmKind::cot) fixed = D * Ts;
    if (kind == PwmKind::coft) fixed = (1.0 - D) * Ts;
    const ConverterModel m = build_buck(p, {kind, fixed}, current_mode_comparator(2, kind, R_s, Se));
    return with_duty(m, D);
}

/// Steady state from the joint Newton solve against simulator marching.
[[nodiscard]] inline CheckResult verify_steady_state(const ConverterModel& m, const PeriodicOperatingPoint& op,
                                                     std::size_t max_cycles = 20000) {
    SimOptions so;
    so.stop_when_converged = true;
    // Start a little off the orbit so the comparison is not trivially exact.
    Vector x0 = op.x_star;
    x0 *= 1.0 + 1e-3;
    const auto tr = simulate_cycles(m, constant_control(m.comparator.vc_nominal), max_cycles,
                                    {x0, event_duration(op, m.pwm.kind)}, so);
    const Vector& xs = tr.cycle_edges.back().x;
    return make_check(std::string(to_string(m.pwm.kind)) + " x_star vs marched simulator",
                      relative_difference(op.x_star, xs), 1e-7,
                      tr.converged ? "" : "simulator did not settle");
}

/// One simulated cycle from x_star must land back on x_star. This is the
/// steady-state check that still applies when the orbit is unstable.
[[nodiscard]] inline CheckResult verify_orbit_closure(const ConverterModel& m, const PeriodicOperatingPoint& op) {
    const auto tr = simulate_cycles(m, constant_control(m.comparator.vc_nominal), 1,
                                    {op.x_star, event_duration(op, m.pwm.kind)});
    return make_check(std::string(to_string(m.pwm.kind)) + " x_star vs one simulated cycle",
                      relative_difference(op.x_star, tr.cycle_edges.back().x), 1e-7);
}

struct InjectionComparison {
    std::vector<Real> f_hz;
    std::vector<Complex> analytic;
    std::vector<Complex> measured;
    Real max_mag_rel = 0.0;
    Real max_phase_deg = 0.0;
};

[[nodiscard]] inline std::vector<Real> log_frequencies(Real f_lo, Real f_hi, std::size_t count) {
    std::vector<Real> f(count);
    for (std::size_t i = 0; i < count; ++i) {
        const Real s = count > 1 ? static_cast<Real>(i) / static_cast<Real>(count - 1) : 0.0;
        f[i] = f_lo * std::pow(f_hi / f_lo, s);
    }
    return f;
}

[[nodiscard]] inline InjectionComparison compare_with_injection(const ConverterModel& m,
                                                                const PeriodicOperatingPoint& op,
                                                                std::span<const Real> f_hz,
                                                                const InjectionOptions& opt = {}) {
    const LinearizedCycleMap map = linearize(m, op);
    InjectionComparison c;
    for (Real f : f_hz) {
        const Complex a = frequency_response(map, m.C_phys, f, op.period());
        const Complex g = measure_frequency_response(m, op, f, opt).gain;
        c.f_hz.push_back(f);
        c.analytic.push_back(a);
        c.measured.push_back(g);
        c.max_mag_rel = std::max(c.max_mag_rel, std::abs(std::abs(g) - std::abs(a)) / std::abs(a));
        c.max_phase_deg = std::max(c.max_phase_deg, std::abs(std::arg(g / a)) * 180.0 / M_PI);
    }
    return c;
}

[[nodiscard]] inline std::vector<CheckResult> verify_transfer_function(const ConverterModel& m,
                                                                       const PeriodicOperatingPoint& op,
                                                                       std::size_t points = 15) {
    const Real T = op.period();
    const auto f = log_frequencies(1e-3 / T, 0.4 / T, points);
    const auto c = compare_with_injection(m, op, f);
    const std::string k(to_string(m.pwm.kind));
    return {make_check(k + " control-to-output magnitude vs injection", c.max_mag_rel, 0.02),
            make_check(k + " control-to-output phase (deg) vs injection", c.max_phase_deg, 2.0)};
}

/// Simulates from a 1e-6 relative perturbation of the orbit and reports the
/// even/odd cluster structure of the last `tail` sampled states.
[[nodiscard]] inline PeriodTwoReport oracle_period_two(const ConverterModel& m, const PeriodicOperatingPoint& op,
                                                       std::size_t cycles = 2000, std::size_t tail = 200) {
    SimOptions so;
    so.clamp_to_clock = true;
    Vector x0 = op.x_star;
    x0(0) *= 1.0 + 1e-6;
    const auto tr = simulate_cycles(m, constant_control(m.comparator.vc_nominal), cycles,
                                    {x0, event_duration(op, m.pwm.kind)}, so);
    const auto st = tr.sampled_states();
    const std::size_t from = st.size() > tail ? st.size() - tail : 0;
    return detect_period_two(std::span(st).subspan(from));
}

/// Per-cycle decay rate of a small perturbation in the simulator, from the
/// log-slope of the deviation norm over a window after the transient.
[[nodiscard]] inline Real oracle_decay_rate(const ConverterModel& m, const PeriodicOperatingPoint& op,
                                            std::size_t skip = 20, std::size_t window = 60) {
    Vector x0 = op.x_star;
    x0 += 1e-6 * op.x_star.norm() * Vector::Ones(x0.size());
    const auto tr = simulate_cycles(m, constant_control(m.comparator.vc_nominal), skip + window,
                                    {x0, event_duration(op, m.pwm.kind)});
    const Real d0 = (tr.cycle_edges[skip].x - op.x_star).norm();
    const Real d1 = (tr.cycle_edges[skip + window].x - op.x_star).norm();
    return std::pow(d1 / d0, 1.0 / static_cast<Real>(window));
}

// ---------------------------------------------------------------------------
// Peak-current-mode subharmonic boundary

struct PcmDesign {
    BuckParams power;
    Real T_s = 10e-6;
    Real R_sense = 0.1;
};

[[nodiscard]] inline ConverterModel pcm_buck(const PcmDesign& d, Real duty, Real Se) {
    const ConverterModel m = build_buck(d.power, {PwmKind::ff_trailing, d.T_s},
                                        current_mode_comparator(2, PwmKind::ff_trailing, d.R_sense, Se));
    return with_duty(m, duty);
}

/// Ramp equal to the sensed inductor down-slope at D = 0.5.
[[nodiscard]] inline Real off_slope_ramp(const PcmDesign& d) {
    return d.R_sense * 0.5 * d.power.Vin / d.power.L_f;
}

[[nodiscard]] inline Real pcm_lambda_max(const PcmDesign& d, Real duty, Real Se) {
    const ConverterModel m = pcm_buck(d, duty, Se);
    return spectral_radius(linearize(m, solve_periodic(m)));
}

/// Duty where |lambda|max crosses 1, by bisection on [lo, hi].
[[nodiscard]] inline std::optional<Real> pcm_stability_boundary(const PcmDesign& d, Real Se, Real lo, Real hi) {
    auto f = [&](Real D) { return pcm_lambda_max(d, D, Se) - 1.0; };
    Real flo = f(lo);
    if ((flo < 0.0) == (f(hi) < 0.0)) return std::nullopt;
    for (int i = 0; i < 50; ++i) {
        const Real mid = 0.5 * (lo + hi);
        const Real fm = f(mid);
        if ((fm < 0.0) == (flo < 0.0)) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    return 0.5 * (lo + hi);
}

[[nodiscard]] inline std::vector<CheckResult> verify_subharmonic_boundary(const PcmDesign& d = {}) {
    std::vector<CheckResult> out;
    const auto bordered = pcm_stability_boundary(d, 0.0, 0.3, 0.7);
    out.push_back(make_check("Se = 0 boundary duty |D* - 0.5|", bordered ? std::abs(*bordered - 0.5) : INFINITY, 0.01,
                             bordered ? "D* = " + std::to_string(*bordered) : "no crossing"));
    const Real tiny = 1e-9 * off_slope_ramp(d);
    const auto limit = pcm_stability_boundary(d, tiny, 0.3, 0.7);
    out.push_back(make_check("Se -> 0+ boundary duty |D* - 0.5|", limit ? std::abs(*limit - 0.5) : INFINITY, 0.01,
                             limit ? "D* = " + std::to_string(*limit) : "no crossing"));

    for (Real D : {0.45, 0.55}) {
        const ConverterModel m = pcm_buck(d, D, 0.0);
        const auto op = solve_periodic(m);
        const bool unstable = spectral_radius(linearize(m, op)) >= 1.0;
        const auto rep = oracle_period_two(m, op);
        char buf[160];
        std::snprintf(buf, sizeof buf, "gap %.3e, spread %.3e", rep.cluster_gap, rep.intra_spread);
        out.push_back(make_flag("D = " + std::to_string(D).substr(0, 4) + (D > 0.5 ? " period-2 in simulator" : " no period-2 in simulator"),
                                rep.period_two == (D > 0.5) && unstable == rep.period_two, buf));
    }

    const Real Se = off_slope_ramp(d);
    Real worst = 0.0;
    for (Real D = 0.30; D <= 0.70 + 1e-12; D += 0.02) worst = std::max(worst, pcm_lambda_max(d, D, Se));
    out.push_back(make_check("compensated |lambda|max for D in [0.30, 0.70]", worst, 1.0 - 1e-9,
                             "Se = " + std::to_string(Se) + " V/s"));
    return out;
}

// ---------------------------------------------------------------------------
// Duty mapping

[[nodiscard]] inline std::vector<CheckResult> verify_duty_mapping(Real T_s = 1e-6, Real width_ratio = 0.4) {
    std::vector<CheckResult> out;
    const DutyOperatorSpec tr{DutyKind::translation, T_s, width_ratio * T_s};
    const Real limit = -tr.T_w / (T_s * T_s);
    out.push_back(make_check("translation gain at s = 0", std::abs(duty_gain(tr, 0.0).real() - limit), 0.0));
    out.push_back(make_check("translation gain magnitude at 1e-3/T_s, relative",
                             std::abs(std::abs(duty_gain(tr, Complex(0.0, 2 * M_PI * 1e-3 / T_s))) - std::abs(limit)) /
                                 std::abs(limit),
                             1e-3));
    out.push_back(make_check("FF trailing gain = +1/T_s",
                             std::abs(duty_gain({DutyKind::ff_trailing_edge, T_s, 0.0}, Complex(0.0, 1e5)) -
                                      Complex(1.0 / T_s, 0.0)), 0.0));
    out.push_back(make_check("FF leading gain = -1/T_s",
                             std::abs(duty_gain({DutyKind::ff_leading_edge, T_s, 0.0}, Complex(0.0, 1e5)) -
                                      Complex(-1.0 / T_s, 0.0)), 0.0));

    // Spectral gain of the exact duty waveform for a sinusoidal shift, 20 frequencies.
    const std::size_t N = 400;
    const Real amp = 1e-4 * T_s;
    Real mag = 0.0, ph = 0.0;
    for (const auto& spec : {tr, DutyOperatorSpec{DutyKind::ff_trailing_edge, T_s, 0.5 * T_s},
                             DutyOperatorSpec{DutyKind::ff_leading_edge, T_s, 0.5 * T_s}}) {
        for (int i = 1; i <= 20; ++i) {
            // Whole number of periods in the record: f = bin / (N T_s).
            const auto bin = static_cast<std::size_t>(std::lround(0.45 * N * i / 21.0));
            const Real w = 2 * M_PI * static_cast<Real>(bin) / static_cast<Real>(N);
            std::vector<Real> shifts(N);
            for (std::size_t n = 0; n < N; ++n) shifts[n] = amp * std::sin(w * static_cast<Real>(n));
            const Complex measured = duty_response_from_edges(spec, shifts, w / T_s);
            const Complex expect = duty_gain(spec, Complex(0.0, w / T_s));
            mag = std::max(mag, std::abs(std::abs(measured) - std::abs(expect)) / std::abs(expect));
            ph = std::max(ph, std::abs(std::arg(measured / expect)) * 180.0 / M_PI);
        }
    }
    out.push_back(make_check("duty waveform spectrum vs duty_gain, magnitude", mag, 0.01));
    out.push_back(make_check("duty waveform spectrum vs duty_gain, phase (deg)", ph, 1.0));
    return out;
}

// ---------------------------------------------------------------------------
// Distillation

[[nodiscard]] inline std::vector<CheckResult> verify_distillation_ideal(const BuckParams& p, Real T_s, Real D) {
    BuckParams ideal = p;
    ideal.R_dcr = ideal.R_esr = 0.0;
    const ConverterModel m = build_buck(ideal, {PwmKind::ff_trailing, T_s},
                                        current_mode_comparator(2, PwmKind::ff_trailing, 0.1, 0.0, -1.0));
    const DistilledModel dm = distill(m);
    Vector By(2);
    By << -1.0 / ideal.L_f, -1.0 / (ideal.R * ideal.C_f);
    std::vector<CheckResult> out;
    out.push_back(make_check("By_on, By_off vs buck closed form",
                             std::max((dm.By_on - By).cwiseAbs().maxCoeff(), (dm.By_off - By).cwiseAbs().maxCoeff()), 0.0));
    out.push_back(make_check("E_on, E_off vanish", std::max(dm.residual_on.norm(), dm.residual_off.norm()), 0.0));

    const Real T_on = D * T_s, T_off = T_s - T_on;
    const auto cyc = distilled_cycle_map(dm, T_on, T_off, {ideal.Vin, D * ideal.Vin});
    out.push_back(make_check("Phi_h = I + A0 T_s",
                             (cyc.Phi_h - (Matrix::Identity(2, 2) + dm.A0 * (T_on + T_off))).cwiseAbs().maxCoeff(), 0.0));
    const Matrix composed = distilled_segment_propagator(dm, SegmentSide::off, T_off, {ideal.Vin, 0.0}).phi *
                          distilled_segment_propagator(dm, SegmentSide::on, T_on, {ideal.Vin, 0.0}).phi;
    out.push_back(make_check("Phi_h vs composed segment maps", relative_difference(cyc.Phi_h, composed), 1e-15));

    const DistilledDc dc = solve_distilled_dc(dm, ideal.Vin, T_on, T_off);
    const Real eps = std::numeric_limits<Real>::epsilon();
    const Real vo_expect = T_on / T_s * ideal.Vin;
    out.push_back(make_check("v_o = D v_in (ulps)", std::abs(dc.v_o - vo_expect) / (eps * vo_expect), 8.0));
    out.push_back(make_check("i_L* = v_o / R (ulps)", std::abs(dc.i_L_star - dc.v_o / ideal.R) / (eps * dc.v_o / ideal.R), 8.0));
    out.push_back(make_flag("rank(I - Phi_h) = 1 and v_C free", dc.rank == 1 && dc.v_C_free));
    return out;
}

/// Port projection of an arbitrary two-state single-input model: exact
/// reconstruction, orthogonality, least-squares minimality, nilpotent closed
/// forms against the generic exponential, and the volt-second identity.
[[nodiscard]] inline std::vector<CheckResult> verify_distillation_model(const ConverterModel& m, Real T_on,
                                                                        Real T_off) {
    const DistilledModel dm = distill(m);
    std::vector<CheckResult> out;
    Real recon = 0.0, orth = 0.0, lsq = 0.0;
    const std::array<std::pair<const Matrix*, std::pair<const Vector*, const Matrix*>>, 2> sides{
        std::pair{&m.on_segment.A, std::pair{&dm.By_on, &dm.residual_on}},
        std::pair{&m.off_segment.A, std::pair{&dm.By_off, &dm.residual_off}}};
    for (const auto& [A, rest] : sides) {
        const auto& [By, E] = rest;
        const Matrix rebuilt = dm.A0 + (*By) * dm.C_phys + *E;
        recon = std::max(recon, (rebuilt - *A).cwiseAbs().maxCoeff() / std::max(A->cwiseAbs().maxCoeff(), 1e-300));
        orth = std::max(orth, (*E * dm.C_phys.transpose()).norm() / std::max(A->norm() * dm.C_phys.norm(), 1e-300));
        const Real best = oracle::rank_one_fit_residual(*A - dm.A0, dm.C_phys);
        lsq = std::max(lsq, std::abs(E->norm() - best) / std::max(A->norm(), 1e-300));
    }
    out.push_back(make_check("A_i = A0 + By_i C + E_i (relative)", recon, 1e-15));
    out.push_back(make_check("E_i C^T = 0 (relative)", orth, 1e-15));
    out.push_back(make_check("||E_i||_F vs dense least-squares minimum (relative)", lsq, 1e-10));

    const Real vin = m.on_segment.U(0);
    const Eigen::Vector2d u(vin, 0.4 * vin);
    Real closed = 0.0;
    for (const auto side : {SegmentSide::on, SegmentSide::off}) {
        const Real T = side == SegmentSide::on ? T_on : T_off;
        const auto d = distilled_segment_propagator(dm, side, T, u);
        const Propagator g = propagator(PwlSegment{dm.A0, port_drive(dm, side, u), Vector::Ones(1), "kernel"}, T);
        closed = std::max({closed, relative_difference(d.phi, g.phi), relative_difference(d.forcing, g.gamma)});
    }
    out.push_back(make_check("nilpotent closed forms vs generic exponential", closed, 1e-13));

    const auto cyc = distilled_cycle_map(dm, T_on, T_off, u);
    const Real vs = volt_second_residual(dm, T_on, T_off, u);
    out.push_back(make_check("volt-second residual = first entry of Gamma_h u", std::abs(vs - cyc.Gamma_h_u(0)),
                             1e-12 * std::max(1.0, std::abs(cyc.Gamma_h_u(0)))));
    return out;
}

}  // namespace pwmsd
