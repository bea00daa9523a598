#pragma once

// Port-structured reduction of a two-segment converter onto a shared
// integrator-cascade kernel A0 (A0^2 = 0):
//
//     dx/dt = A0 x + Bu_i v_in + By_i v_o,   v_o = C_phys x
//
// By_i is the least-squares rank-1 fit of A_i - A0 along C_phys and E_i is
// what that fit leaves behind. With a nilpotent kernel the segment maps are
// polynomial in T, and the cycle self-consistency equation exposes
// volt-second balance (row 1) and amp-second balance (row 2).

#include "pwmsd/converter.hpp"

#include <optional>
#include <string>

namespace pwmsd {

struct DistilledModel {
    Matrix A0;
    Vector Bu_on, Bu_off;
    Vector By_on, By_off;
    RowVector C_phys;
    Matrix residual_on, residual_off;  // E_i
    Matrix T_r;
    Real quality_on = 0.0;   // ||E_on||_F / ||A_on - A0||_F (0 when A_on == A0)
    Real quality_off = 0.0;

    [[nodiscard]] Index dim() const noexcept { return A0.rows(); }
};

enum class SegmentSide { on, off };

/// Default kernel: keep only the capacitor-integrator entry A(1,0) = 1/C_f.
[[nodiscard]] inline Matrix default_kernel(const Matrix& A_on) {
    if (A_on.rows() != 2) {
        throw Error(ErrorCode::invalid_parameter, "default kernel is defined for two-state models only");
    }
    Matrix A0 = Matrix::Zero(2, 2);
    A0(1, 0) = A_on(1, 0);
    return A0;
}

[[nodiscard]] inline DistilledModel distill(const ConverterModel& m, std::optional<Matrix> kernel = std::nullopt,
                                            std::optional<Matrix> transform = std::nullopt) {
    const Index n = m.dim();
    if (m.on_segment.B.cols() != 1 || m.off_segment.B.cols() != 1) {
        throw Error(ErrorCode::invalid_parameter, "distillation expects a single input v_in");
    }
    Matrix T = transform.value_or(Matrix::Identity(n, n));
    if (T.rows() != n || T.cols() != n) throw Error(ErrorCode::invalid_parameter, "transform must be n x n");
    const auto lu = T.fullPivLu();
    if (!lu.isInvertible()) throw Error(ErrorCode::invalid_parameter, "transform is not invertible");
    const Matrix Tinv = lu.inverse();

    const Matrix A_on = T * m.on_segment.A * Tinv;
    const Matrix A_off = T * m.off_segment.A * Tinv;
    const RowVector C = m.C_phys * Tinv;

    const Real cct = C.squaredNorm();
    if (!(cct > 0.0)) throw Error(ErrorCode::undefined_projection, "C_phys is zero");

    DistilledModel d;
    d.A0 = kernel.value_or(default_kernel(A_on));
    if (d.A0.rows() != n || d.A0.cols() != n) throw Error(ErrorCode::invalid_parameter, "kernel must be n x n");
    if (!(d.A0 * d.A0).isZero(0.0)) {
        throw Error(ErrorCode::invalid_parameter, "kernel must be nilpotent with A0^2 = 0");
    }
    d.T_r = T;
    d.C_phys = C;
    d.Bu_on = T * m.on_segment.B.col(0);
    d.Bu_off = T * m.off_segment.B.col(0);

    auto project = [&](const Matrix& A, Vector& By, Matrix& E, Real& quality) {
        const Matrix D = A - d.A0;
        By = D * C.transpose() / cct;
        E = D - By * C;
        const Real dn = D.norm();
        quality = dn > 0.0 ? E.norm() / dn : 0.0;
    };
    project(A_on, d.By_on, d.residual_on, d.quality_on);
    project(A_off, d.By_off, d.residual_off, d.quality_off);
    return d;
}

/// [Bu_i By_i] u for u = [v_in, v_o].
[[nodiscard]] inline Vector port_drive(const DistilledModel& dm, SegmentSide side, const Eigen::Vector2d& u) {
    return side == SegmentSide::on ? Vector(dm.Bu_on * u(0) + dm.By_on * u(1))
                                   : Vector(dm.Bu_off * u(0) + dm.By_off * u(1));
}

struct DistilledPropagator {
    Matrix phi;
    Vector forcing;
};

/// phi = I + A0 T, forcing = (T I + T^2/2 A0) [Bu By] u.
[[nodiscard]] inline DistilledPropagator distilled_segment_propagator(const DistilledModel& dm, SegmentSide side,
                                                                      Real T, const Eigen::Vector2d& u) {
    if (!(T >= 0.0)) throw Error(ErrorCode::invalid_parameter, "duration must be >= 0");
    const Index n = dm.dim();
    const Matrix I = Matrix::Identity(n, n);
    return {I + dm.A0 * T, (T * I + 0.5 * T * T * dm.A0) * port_drive(dm, side, u)};
}

struct DistilledCycleMap {
    Matrix Phi_h;
    Vector Gamma_h_u;
};

[[nodiscard]] inline DistilledCycleMap distilled_cycle_map(const DistilledModel& dm, Real T_on, Real T_off,
                                                           const Eigen::Vector2d& u) {
    const auto on = distilled_segment_propagator(dm, SegmentSide::on, T_on, u);
    const auto off = distilled_segment_propagator(dm, SegmentSide::off, T_off, u);
    const Index n = dm.dim();
    // (I + A0 T_off)(I + A0 T_on) collapses to I + A0 T_s because A0^2 = 0.
    return {Matrix::Identity(n, n) + dm.A0 * (T_on + T_off), off.phi * on.forcing + off.forcing};
}

/// Net inductor drive over one cycle; zero is the solvability condition of
/// the periodic self-consistency equation.
[[nodiscard]] inline Real volt_second_residual(const DistilledModel& dm, Real T_on, Real T_off,
                                               const Eigen::Vector2d& u) {
    return T_on * port_drive(dm, SegmentSide::on, u)(0) + T_off * port_drive(dm, SegmentSide::off, u)(0);
}

struct AmpSecondBalance {
    Real sampled = 0.0;  // i_L at the cycle start solving row 2 of (I - Phi_h) x* = Gamma_h u
    Real average = 0.0;  // cycle-mean i_L for zero net capacitor charge
};

/// Inductor-current level pinned by the capacitor integrator.
///
/// Row 2 of (I - Phi_h) x* = Gamma_h u reads -(T_s / C_f) i_L* = [0 1] Gamma_h u,
/// which fixes the sampled current. Integrating dv_C/dt = i_L / C_f + [0 1] B_i u
/// over the cycle instead fixes the mean current; for the ideal buck that is v_o / R.
[[nodiscard]] inline AmpSecondBalance amp_second_current(const DistilledModel& dm, Real T_on, Real T_off,
                                                         const Eigen::Vector2d& u) {
    if (dm.dim() != 2 || dm.A0(1, 0) == 0.0) {
        throw Error(ErrorCode::invalid_parameter, "amp-second balance needs the two-state integrator kernel");
    }
    const Real Ts = T_on + T_off;
    if (!(Ts > 0.0)) throw Error(ErrorCode::invalid_parameter, "T_on + T_off must be > 0");
    const Real C_f = 1.0 / dm.A0(1, 0);
    const auto cyc = distilled_cycle_map(dm, T_on, T_off, u);
    AmpSecondBalance a;
    a.sampled = -(C_f / Ts) * cyc.Gamma_h_u(1);
    a.average = -(C_f / Ts) * (T_on * port_drive(dm, SegmentSide::on, u)(1) +
                               T_off * port_drive(dm, SegmentSide::off, u)(1));
    return a;
}

struct DistilledDc {
    Real v_o = 0.0;
    Real i_L_star = 0.0;     // cycle-mean inductor current
    Real i_L_sampled = 0.0;  // inductor current at the cycle start
    bool v_C_free = false;
    Index rank = 0;          // rank of I - Phi_h
};

/// Solves the volt-second condition for v_o (affine in v_o), then the
/// amp-second condition for the current level.
[[nodiscard]] inline DistilledDc solve_distilled_dc(const DistilledModel& dm, Real v_in, Real T_on, Real T_off) {
    const Real r0 = volt_second_residual(dm, T_on, T_off, {v_in, 0.0});
    const Real slope = volt_second_residual(dm, T_on, T_off, {0.0, 1.0});
    const Real scale = (T_on + T_off) * (std::abs(dm.By_on(0)) + std::abs(dm.By_off(0)) +
                                         std::abs(dm.Bu_on(0)) + std::abs(dm.Bu_off(0)));
    if (!(std::abs(slope) > 1e-14 * scale) || slope == 0.0) {
        throw Error(ErrorCode::port_not_in_inductor_drive);
    }
    DistilledDc dc;
    dc.v_o = -r0 / slope;
    if (dc.v_o == 0.0) dc.v_o = 0.0;  // drop the sign of a negative zero
    const auto amp = amp_second_current(dm, T_on, T_off, {v_in, dc.v_o});
    dc.i_L_star = amp.average;
    dc.i_L_sampled = amp.sampled;

    const Index n = dm.dim();
    const Matrix M = Matrix::Identity(n, n) - distilled_cycle_map(dm, T_on, T_off, {v_in, dc.v_o}).Phi_h;
    Eigen::JacobiSVD<Matrix> svd(M);
    const auto& sv = svd.singularValues();
    const Real thresh = 1e-10 * sv(0);
    dc.rank = 0;
    for (Index i = 0; i < sv.size(); ++i) {
        if (sv(i) > thresh && sv(i) > 0.0) ++dc.rank;
    }
    dc.v_C_free = dc.rank < n;
    return dc;
}

}  // namespace pwmsd
