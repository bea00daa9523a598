#pragma once

// Linearized one-cycle maps for the four PWM logics.
//
// Every logic samples at the comparator edge, so one sampled cycle is the
// leading segment (fixed, or the clock complement T_s - T_prev for the
// fixed-frequency kinds) followed by the event-determined segment:
//
//     x_{k+1} = Phi_e(T_{k+1}) (Phi_l(t_l) x_k + Gamma_l(t_l)) + Gamma_e(T_{k+1})
//
// Differentiating at the operating point gives the state Jacobian, the
// sensitivity gamma_plus to the current event duration and, for the
// fixed-frequency kinds, gamma_minus to the previous one.  The event relation
// K x_hat - Se T_hat = vc_hat then removes the timing variables.

#include "pwmsd/steady_state.hpp"

#include <algorithm>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace pwmsd {

struct JacobianBlocks {
    Matrix phi_cycle;
    Vector gamma_plus;
    std::optional<Vector> gamma_minus;  // fixed-frequency logics only
};

/// E x_{k+1} = G x_k + h1 vc_{k+1} + h0 vc_k.
///
/// When timing_augmented is set the state is [x; T_hat] (dimension n + 1):
/// the event relation is kept as an extra algebraic row instead of being
/// divided by Se. This is the form used for Se == 0.
struct LinearizedCycleMap {
    Matrix E;
    Matrix G;
    Vector h1;
    Vector h0;
    Real Se_used = 0.0;
    PwmKind logic = PwmKind::cot;
    bool timing_augmented = false;
    std::vector<std::string> warnings;

    [[nodiscard]] Index dim() const noexcept { return E.rows(); }
};

enum class Elimination {
    automatic,  // divide by Se unless Se is negligible, then keep the timing row
    divide_by_se,
    bordered,
};

[[nodiscard]] inline JacobianBlocks jacobian_blocks(const ConverterModel& m, const PeriodicOperatingPoint& op) {
    const PwmKind kind = m.pwm.kind;
    const PwlSegment& lead = m.leading_segment();
    const PwlSegment& ev = m.event_segment();
    const Propagator pl = propagator(lead, leading_duration(op, kind));
    const Propagator pe = propagator(ev, event_duration(op, kind));
    const Vector x_mid = advance(pl, op.x_star);

    JacobianBlocks b;
    b.phi_cycle = pe.phi * pl.phi;
    b.gamma_plus = ev.A * pe.phi * x_mid + pe.phi * ev.forcing();
    if (is_fixed_frequency(kind)) {
        b.gamma_minus = -pe.phi * (lead.A * pl.phi * op.x_star + pl.phi * lead.forcing());
    }
    return b;
}

[[nodiscard]] inline LinearizedCycleMap linearized_map(const ConverterModel& m, const JacobianBlocks& b,
                                                       Elimination mode = Elimination::automatic) {
    const Index n = b.phi_cycle.rows();
    const RowVector& K = m.comparator.K;
    const Real Se = m.comparator.Se;
    const Vector gm = b.gamma_minus.value_or(Vector::Zero(n));

    const Real loop_rate = std::abs((K * b.gamma_plus)(0));
    bool bordered = mode == Elimination::bordered;
    if (mode == Elimination::automatic) bordered = !(Se > 1e-8 * loop_rate);
    if (mode == Elimination::divide_by_se && !(Se > 0.0)) {
        throw Error(ErrorCode::uncompensated_modulator);
    }

    LinearizedCycleMap map;
    map.Se_used = Se;
    map.logic = m.pwm.kind;
    map.timing_augmented = bordered;
    if (!bordered) {
        map.E = Matrix::Identity(n, n) - b.gamma_plus * K / Se;
        map.G = b.phi_cycle + gm * K / Se;
        map.h1 = -b.gamma_plus / Se;
        map.h0 = -gm / Se;
    } else {
        map.E = Matrix::Zero(n + 1, n + 1);
        map.E.topLeftCorner(n, n) = Matrix::Identity(n, n);
        map.E.topRightCorner(n, 1) = -b.gamma_plus;
        map.E.bottomLeftCorner(1, n) = K;
        map.E(n, n) = -Se;
        map.G = Matrix::Zero(n + 1, n + 1);
        map.G.topLeftCorner(n, n) = b.phi_cycle;
        map.G.topRightCorner(n, 1) = gm;
        map.h1 = Vector::Zero(n + 1);
        map.h1(n) = 1.0;
        map.h0 = Vector::Zero(n + 1);
    }

    Eigen::JacobiSVD<Matrix> svd(map.E);
    const auto& sv = svd.singularValues();
    const Real smin = sv(sv.size() - 1);
    if (!(smin > 1e-15 * sv(0))) {
        throw Error(ErrorCode::degenerate_elimination, "E is singular");
    }
    const Real cond = sv(0) / smin;
    if (cond > 1e10) {
        map.warnings.push_back("E is ill-conditioned (cond = " + std::to_string(cond) + ")");
    }
    return map;
}

/// Convenience: blocks and elimination in one call.
[[nodiscard]] inline LinearizedCycleMap linearize(const ConverterModel& m, const PeriodicOperatingPoint& op,
                                                  Elimination mode = Elimination::automatic) {
    return linearized_map(m, jacobian_blocks(m, op), mode);
}

/// Closed-loop cycle matrix E^{-1} G.
[[nodiscard]] inline Matrix cycle_matrix(const LinearizedCycleMap& map) {
    return map.E.fullPivLu().solve(map.G);
}

/// Eigenvalues of E^{-1} G sorted by magnitude, largest first.
[[nodiscard]] inline std::vector<Complex> closed_loop_eigenvalues(const LinearizedCycleMap& map) {
    const Matrix M = cycle_matrix(map);
    Eigen::EigenSolver<Matrix> es(M, false);
    if (es.info() != Eigen::Success) {
        throw Error(ErrorCode::degenerate_elimination, "eigenvalue iteration failed");
    }
    std::vector<Complex> ev(es.eigenvalues().data(), es.eigenvalues().data() + es.eigenvalues().size());
    std::stable_sort(ev.begin(), ev.end(), [](Complex a, Complex b) { return std::abs(a) > std::abs(b); });
    return ev;
}

[[nodiscard]] inline Real spectral_radius(const LinearizedCycleMap& map) {
    const auto ev = closed_loop_eigenvalues(map);
    return ev.empty() ? 0.0 : std::abs(ev.front());
}

/// Output row padded with a zero for the timing coordinate when needed.
[[nodiscard]] inline RowVector output_row(const LinearizedCycleMap& map, const RowVector& C_phys) {
    if (C_phys.size() == map.dim()) return C_phys;
    RowVector c = RowVector::Zero(map.dim());
    c.head(C_phys.size()) = C_phys;
    return c;
}

/// C (zE - G)^{-1} (z h1 + h0).
[[nodiscard]] inline Complex control_to_output_tf(const LinearizedCycleMap& map, const RowVector& C_phys,
                                                  Complex z) {
    const ComplexMatrix R = z * map.E.cast<Complex>() - map.G.cast<Complex>();
    const ComplexVector rhs = z * map.h1.cast<Complex>() + map.h0.cast<Complex>();
    Eigen::JacobiSVD<ComplexMatrix> svd(R);
    const auto& sv = svd.singularValues();
    if (!(sv(sv.size() - 1) > 1e-13 * std::max<Real>(sv(0), 1.0))) {
        throw Error(ErrorCode::pole_at_evaluation_point);
    }
    const ComplexVector v = R.fullPivLu().solve(rhs);
    return (output_row(map, C_phys).cast<Complex>() * v)(0);
}

/// Frequency response on the unit circle, z = exp(j 2 pi f T_cycle).
[[nodiscard]] inline Complex frequency_response(const LinearizedCycleMap& map, const RowVector& C_phys, Real f_hz,
                                                Real T_cycle) {
    const Real w = 2.0 * M_PI * f_hz * T_cycle;
    return control_to_output_tf(map, C_phys, Complex(std::cos(w), std::sin(w)));
}

/// Impulse response of the recursion with vc_hat = delta[k], by direct iteration.
[[nodiscard]] inline std::vector<Real> impulse_response(const LinearizedCycleMap& map, const RowVector& C_phys,
                                                        std::size_t samples) {
    const auto lu = map.E.fullPivLu();
    const RowVector c = output_row(map, C_phys);
    Vector x = Vector::Zero(map.dim());
    std::vector<Real> y;
    y.reserve(samples);
    // vc_0 = 1 enters x_0 through h1 (E x_0 = h1), then h0 drives x_1.
    x = lu.solve(Vector(map.h1));
    y.push_back((c * x)(0));
    for (std::size_t k = 1; k < samples; ++k) {
        const Vector rhs = map.G * x + (k == 1 ? map.h0 : Vector::Zero(map.dim()));
        x = lu.solve(rhs);
        y.push_back((c * x)(0));
    }
    return y;
}

struct SweepRow {
    Real param = 0.0;
    Real lambda_max = 0.0;
    bool unstable = false;
    std::string error;  // solver error text when no operating point exists

    [[nodiscard]] bool ok() const noexcept { return error.empty(); }
};

using ModelFamily = std::function<ConverterModel(Real)>;

[[nodiscard]] inline std::vector<SweepRow> stability_sweep(const ModelFamily& family, std::span<const Real> grid,
                                                           const SolverOptions& opt = {}) {
    std::vector<SweepRow> rows;
    rows.reserve(grid.size());
    for (Real p : grid) {
        SweepRow row;
        row.param = p;
        try {
            const ConverterModel m = family(p);
            const PeriodicOperatingPoint op = solve_periodic(m, opt);
            row.lambda_max = spectral_radius(linearize(m, op));
            row.unstable = row.lambda_max >= 1.0;
        } catch (const Error& e) {
            row.error = e.what();
            row.lambda_max = NAN;
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

/// First adjacent pair of converged rows whose stability flags differ.
[[nodiscard]] inline std::optional<std::pair<Real, Real>> stability_boundary(std::span<const SweepRow> rows) {
    const SweepRow* prev = nullptr;
    for (const auto& r : rows) {
        if (!r.ok()) continue;
        if (prev && prev->unstable != r.unstable) return std::pair{prev->param, r.param};
        prev = &r;
    }
    return std::nullopt;
}

}  // namespace pwmsd
