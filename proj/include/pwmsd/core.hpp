#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <complex>
#include <stdexcept>
#include <string>
#include <string_view>

namespace pwmsd {

using Real = double;
using Complex = std::complex<Real>;
using Index = Eigen::Index;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using ComplexMatrix = Eigen::MatrixXcd;
using ComplexVector = Eigen::VectorXcd;

/// Failure categories surfaced by the library. The CLI maps these onto exit codes.
enum class ErrorCode {
    invalid_parameter,
    propagation_overflow,
    marginal_periodic_solution,
    no_periodic_solution,
    pulse_skipping,
    uncompensated_modulator,
    degenerate_elimination,
    pole_at_evaluation_point,
    translation_operator_pole,
    edge_collision,
    undefined_projection,
    port_not_in_inductor_drive,
    event_not_reached,
    divergence,
    stencil_discontinuity,
    no_small_signal_regime,
};

[[nodiscard]] constexpr std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
    case ErrorCode::invalid_parameter: return "invalid parameter";
    case ErrorCode::propagation_overflow: return "segment propagation overflow";
    case ErrorCode::marginal_periodic_solution: return "periodic solution not unique or marginal";
    case ErrorCode::no_periodic_solution: return "no periodic solution found";
    case ErrorCode::pulse_skipping: return "pulse skipping / saturation at operating point";
    case ErrorCode::uncompensated_modulator: return "uncompensated modulator: K/Se undefined";
    case ErrorCode::degenerate_elimination: return "degenerate elimination";
    case ErrorCode::pole_at_evaluation_point: return "pole at evaluation point";
    case ErrorCode::translation_operator_pole: return "pole of translation operator";
    case ErrorCode::edge_collision: return "edge collision";
    case ErrorCode::undefined_projection: return "undefined projection";
    case ErrorCode::port_not_in_inductor_drive: return "port does not enter inductor drive";
    case ErrorCode::event_not_reached: return "event not reached";
    case ErrorCode::divergence: return "divergence";
    case ErrorCode::stencil_discontinuity: return "Jacobian stencil hit discontinuity";
    case ErrorCode::no_small_signal_regime: return "no small-signal regime at this point";
    }
    return "unknown error";
}

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& detail)
        : std::runtime_error(detail.empty() ? std::string(to_string(code))
                                            : std::string(to_string(code)) + ": " + detail),
          code_(code) {}

    explicit Error(ErrorCode code) : Error(code, std::string{}) {}

    [[nodiscard]] ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[nodiscard]] inline bool all_finite(const Matrix& m) { return m.allFinite(); }

/// Relative difference ||a - b|| / max(||b||, floor), Frobenius for matrices.
template <typename DerivedA, typename DerivedB>
[[nodiscard]] Real relative_difference(const Eigen::MatrixBase<DerivedA>& a,
                                       const Eigen::MatrixBase<DerivedB>& b,
                                       Real floor = 1e-300) {
    const Real denom = std::max<Real>(b.norm(), floor);
    return (a - b).norm() / denom;
}

}  // namespace pwmsd
