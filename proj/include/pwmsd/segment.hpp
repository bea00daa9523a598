#pragma once

// Exact propagation of piecewise-linear (PWL) segments:
//
//     dx/dt = A x + B U,   U constant over the segment
//
// over a duration T gives x(T) = phi x(0) + gamma with phi = e^{AT} and
// gamma = int_0^T e^{A(T - tau)} B U dtau.  Both are read off a single
// exponential of the augmented block matrix [[A, BU], [0, 0]] T, which is
// valid whether or not A is invertible.

#include "pwmsd/core.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>
#include <span>
#include <string>
#include <vector>

namespace pwmsd {

struct PwlSegment {
    Matrix A;           // n x n, 1/s
    Matrix B;           // n x m
    Vector U;           // m, held constant over the segment
    std::string label;

    [[nodiscard]] Index dim() const noexcept { return A.rows(); }
    [[nodiscard]] Index input_dim() const noexcept { return U.size(); }
    /// Constant forcing vector B*U.
    [[nodiscard]] Vector forcing() const { return B * U; }
};

struct Propagator {
    Matrix phi;
    Vector gamma;
    Real duration = 0.0;
};

struct PropagatorDerivatives {
    Matrix dphi_dt;
    Vector dgamma_dt;
};

struct TimedSegment {
    PwlSegment segment;
    Real duration = 0.0;
};

struct CompositionResult {
    Vector x_end;
    std::vector<Vector> boundary_states;  // one per segment end, in order
    Matrix total_phi;                     // reverse product Phi_n ... Phi_1
    Vector total_forcing;                 // x_end - total_phi * x0
};

namespace detail {

inline void check_segment_shape(const PwlSegment& seg) {
    const Index n = seg.A.rows();
    if (seg.A.cols() != n || seg.B.rows() != n || seg.B.cols() != seg.U.size()) {
        throw Error(ErrorCode::invalid_parameter,
                    "segment '" + seg.label + "' has inconsistent A/B/U dimensions");
    }
}

inline Matrix augmented_exponential(const Matrix& A, const Vector& b, Real T) {
    const Index n = A.rows();
    Matrix aug = Matrix::Zero(n + 1, n + 1);
    aug.topLeftCorner(n, n) = A * T;
    aug.topRightCorner(n, 1) = b * T;
    return aug.exp();
}

}  // namespace detail

/// phi = e^{AT}, gamma = forced response over [0, T].
[[nodiscard]] inline Propagator propagator(const PwlSegment& seg, Real T) {
    detail::check_segment_shape(seg);
    if (!(T >= 0.0) || !std::isfinite(T)) {
        throw Error(ErrorCode::invalid_parameter,
                    "segment '" + seg.label + "' duration must be finite and >= 0");
    }
    const Index n = seg.dim();
    if (T == 0.0) {
        return {Matrix::Identity(n, n), Vector::Zero(n), 0.0};
    }
    if (!seg.A.allFinite() || !seg.B.allFinite() || !seg.U.allFinite()) {
        throw Error(ErrorCode::invalid_parameter, "segment '" + seg.label + "' has non-finite entries");
    }
    const Matrix e = detail::augmented_exponential(seg.A, seg.forcing(), T);
    Propagator p{e.topLeftCorner(n, n), e.topRightCorner(n, 1), T};
    if (!p.phi.allFinite() || !p.gamma.allFinite()) {
        throw Error(ErrorCode::propagation_overflow, seg.label);
    }
    return p;
}

/// d(phi)/dT = A e^{AT} and d(gamma)/dT = e^{AT} B U.
[[nodiscard]] inline PropagatorDerivatives propagator_time_derivatives(const PwlSegment& seg, Real T) {
    const Propagator p = propagator(seg, T);
    PropagatorDerivatives d{seg.A * p.phi, p.phi * seg.forcing()};
    if (!d.dphi_dt.allFinite() || !d.dgamma_dt.allFinite()) {
        throw Error(ErrorCode::propagation_overflow, seg.label);
    }
    return d;
}

/// State after one segment, x(T) = phi x0 + gamma.
[[nodiscard]] inline Vector advance(const Propagator& p, const Vector& x0) { return p.phi * x0 + p.gamma; }

/// Multi-segment closed form. Left-multiplies in segment order so that
/// total_phi is the reverse product Phi_n ... Phi_1 and the forcing term
/// accumulates sum_i (Phi_n ... Phi_{i+1}) Gamma_i + Gamma_n.
[[nodiscard]] inline CompositionResult compose(std::span<const TimedSegment> segments, const Vector& x0) {
    if (segments.empty()) {
        throw Error(ErrorCode::invalid_parameter, "compose needs at least one segment");
    }
    const Index n = x0.size();
    CompositionResult out;
    out.total_phi = Matrix::Identity(n, n);
    out.total_forcing = Vector::Zero(n);
    out.x_end = x0;
    out.boundary_states.reserve(segments.size());
    for (const auto& ts : segments) {
        if (ts.segment.dim() != n) {
            throw Error(ErrorCode::invalid_parameter,
                        "segment '" + ts.segment.label + "' dimension does not match the state");
        }
        const Propagator p = propagator(ts.segment, ts.duration);
        out.total_phi = p.phi * out.total_phi;
        out.total_forcing = p.phi * out.total_forcing + p.gamma;
        out.x_end = p.phi * out.x_end + p.gamma;
        out.boundary_states.push_back(out.x_end);
    }
    return out;
}

}  // namespace pwmsd
