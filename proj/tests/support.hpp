#pragma once

#include <catch2/catch_amalgamated.hpp>

#include "pwmsd/pwmsd.hpp"
#include "pwmsd/verification.hpp"

#include <cmath>
#include <random>

namespace pwmsd::test {

inline constexpr Real T_s = 10e-6;

/// 12 V, 10 uH, 100 uF, 1 ohm: the nominal ideal buck used throughout.
inline BuckParams nominal_buck() { return {}; }

inline ConverterModel cot_buck(Real duty = 0.4, Real Se = 1e4, BuckParams p = nominal_buck()) {
    const ConverterModel m =
        build_buck(p, {PwmKind::cot, duty * T_s}, current_mode_comparator(2, PwmKind::cot, 0.1, Se));
    return with_duty(m, duty);
}

inline ConverterModel coft_buck(Real duty = 0.4, Real Se = 1e4, BuckParams p = nominal_buck()) {
    const ConverterModel m =
        build_buck(p, {PwmKind::coft, (1.0 - duty) * T_s}, current_mode_comparator(2, PwmKind::coft, 0.1, Se));
    return with_duty(m, duty);
}

inline ConverterModel ff_buck(PwmKind kind, Real duty, Real Se, BuckParams p = nominal_buck()) {
    const ConverterModel m = build_buck(p, {kind, T_s}, current_mode_comparator(2, kind, 0.1, Se));
    return with_duty(m, duty);
}

inline Matrix random_matrix(std::mt19937_64& rng, Index r, Index c, Real lo = -1.0, Real hi = 1.0) {
    std::uniform_real_distribution<Real> u(lo, hi);
    Matrix M(r, c);
    for (Index i = 0; i < r; ++i)
        for (Index j = 0; j < c; ++j) M(i, j) = u(rng);
    return M;
}

inline Real rel(const Matrix& a, const Matrix& b) { return relative_difference(a, b); }

}  // namespace pwmsd::test
