#include "support.hpp"

using namespace pwmsd;
using namespace pwmsd::test;

namespace {

PeriodicOperatingPoint manual_point(Real iL, Real vC, Real T_on, Real T_off) {
    PeriodicOperatingPoint op;
    op.x_star = Vector(2);
    op.x_star << iL, vC;
    op.T_on_star = T_on;
    op.T_off_star = T_off;
    return op;
}

std::vector<Complex> sorted_eigenvalues(const Matrix& M) {
    Eigen::EigenSolver<Matrix> es(M, false);
    std::vector<Complex> ev(es.eigenvalues().data(), es.eigenvalues().data() + es.eigenvalues().size());
    std::sort(ev.begin(), ev.end(), [](Complex a, Complex b) { return std::abs(a) > std::abs(b); });
    return ev;
}

}  // namespace

TEST_CASE("event-segment sensitivity collapses without dynamics", "[small_signal]") {
    ConverterModel m = cot_buck();
    m.off_segment.A.setZero();
    m.off_segment.B << -4.8e5, 0.0;
    const auto b = jacobian_blocks(m, manual_point(3.0, 4.8, 4e-6, 6e-6));
    CHECK(rel(b.gamma_plus, m.off_segment.forcing()) < 1e-15);
    CHECK_FALSE(b.gamma_minus.has_value());
}

TEST_CASE("COT event sensitivity against a fine difference quotient", "[small_signal]") {
    const ConverterModel m = cot_buck();
    const auto op = solve_periodic(m);
    const auto b = jacobian_blocks(m, op);
    const Real h = 1e-9 * T_s;
    const Real T = op.T_off_star;
    const Vector fd = (explicit_cycle_map(m, op.x_star, T + h, 0.0) - explicit_cycle_map(m, op.x_star, T - h, 0.0)) /
                      (2 * h);
    CHECK(rel(b.gamma_plus, fd) < 1e-5);
}

TEST_CASE("trailing-edge sensitivity to the previous on-time", "[small_signal]") {
    const ConverterModel m = ff_buck(PwmKind::ff_trailing, 0.45, 3e4);
    const auto op = solve_periodic(m);
    const auto b = jacobian_blocks(m, op);
    REQUIRE(b.gamma_minus.has_value());
    const Real h = 1e-9 * T_s;
    const Real Te = op.T_on_star;
    const Vector fd =
        (explicit_cycle_map(m, op.x_star, Te, Te + h) - explicit_cycle_map(m, op.x_star, Te, Te - h)) / (2 * h);
    CHECK(rel(*b.gamma_minus, fd) < 1e-5);
}

TEST_CASE("eliminated COT recursion equals the raw timing recursion", "[small_signal]") {
    const ConverterModel m = cot_buck();
    const auto op = solve_periodic(m);
    const auto b = jacobian_blocks(m, op);
    const auto map = linearized_map(m, b);
    REQUIRE_FALSE(map.timing_augmented);
    const Matrix M = cycle_matrix(map);

    // x_{k+1} = phi x_k + gamma_plus T_k together with K x_{k+1} - Se T_k = 0.
    const Index n = 2;
    Matrix J = Matrix::Zero(n + 1, n + 1);
    J.topLeftCorner(n, n) = Matrix::Identity(n, n);
    J.topRightCorner(n, 1) = -b.gamma_plus;
    J.bottomLeftCorner(1, n) = m.comparator.K;
    J(n, n) = -m.comparator.Se;
    const auto lu = J.fullPivLu();

    Vector x = Vector::Unit(n, 0), z = x;
    for (int k = 0; k < 12; ++k) {
        Vector rhs = Vector::Zero(n + 1);
        rhs.head(n) = b.phi_cycle * z;
        z = lu.solve(rhs).head(n);
        x = M * x;
        CHECK(rel(x, z) < 1e-12);
    }
}

TEST_CASE("no previous-edge input without leading-segment drive", "[small_signal]") {
    ConverterModel m = ff_buck(PwmKind::ff_trailing, 0.45, 3e4);
    m.off_segment.A.setZero();
    m.off_segment.B.setZero();
    const auto map = linearize(m, manual_point(6.0, 5.4, 4.5e-6, 5.5e-6));
    CHECK(map.h0.isZero(0.0));
}

TEST_CASE("closed-loop eigenvalues match the simulator map", "[small_signal]") {
    const ConverterModel m = ff_buck(PwmKind::ff_trailing, 0.45, 3e4);
    const auto op = solve_periodic(m);
    const auto lam = closed_loop_eigenvalues(linearize(m, op));
    const auto fd = sorted_eigenvalues(fd_jacobian(event_resolved_map(m, m.comparator.vc_nominal), op.x_star));
    REQUIRE(lam.size() == fd.size());
    for (std::size_t i = 0; i < lam.size(); ++i) CHECK(std::abs(lam[i] - fd[i]) / std::abs(lam[i]) < 1e-4);
}

TEST_CASE("zero cycle matrix has zero spectrum", "[small_signal]") {
    LinearizedCycleMap map;
    map.E = Matrix::Identity(3, 3);
    map.G = Matrix::Zero(3, 3);
    for (Complex l : closed_loop_eigenvalues(map)) CHECK(std::abs(l) == 0.0);
    CHECK(spectral_radius(map) == 0.0);
}

TEST_CASE("COT decay rate follows the dominant eigenvalue", "[small_signal]") {
    const ConverterModel m = cot_buck();
    const auto op = solve_periodic(m);
    const Real r = spectral_radius(linearize(m, op));
    CHECK(r < 1.0);
    CHECK(std::abs(oracle_decay_rate(m, op) - r) / r < 0.02);
}

TEST_CASE("uncompensated modulator needs the bordered form", "[small_signal]") {
    const ConverterModel m = ff_buck(PwmKind::ff_trailing, 0.45, 0.0);
    const auto op = solve_periodic(m);
    try {
        (void)linearize(m, op, Elimination::divide_by_se);
        FAIL("expected uncompensated modulator");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::uncompensated_modulator);
    }
    const auto map = linearize(m, op);
    CHECK(map.timing_augmented);
    CHECK(map.dim() == 3);

    // The bordered form is the Se -> 0+ limit of the divided one.
    ConverterModel tiny = m;
    tiny.comparator.Se = 1e-6;
    const auto a = closed_loop_eigenvalues(map);
    const auto d = closed_loop_eigenvalues(linearize(tiny, solve_periodic(tiny), Elimination::divide_by_se));
    CHECK(std::abs(a[0] - d[0]) < 1e-6);
    CHECK(std::abs(a[1] - d[1]) < 1e-6);
}

TEST_CASE("transfer function limits", "[small_signal]") {
    for (const ConverterModel& m : {cot_buck(), ff_buck(PwmKind::ff_leading, 0.6, 6e4)}) {
        const auto op = solve_periodic(m);
        const auto map = linearize(m, op);
        const RowVector c = output_row(map, m.C_phys);
        const Complex high = control_to_output_tf(map, m.C_phys, 1e9);
        const Real lim = (c * map.E.fullPivLu().solve(map.h1))(0);
        CHECK(std::abs(high - lim) / std::abs(lim) < 1e-6);

        const Complex dc = control_to_output_tf(map, m.C_phys, 1.0);
        const Real dc_ref = (c * (map.E - map.G).fullPivLu().solve(map.h1 + map.h0))(0);
        CHECK(std::abs(dc - dc_ref) / std::abs(dc_ref) < 1e-12);
    }
}

TEST_CASE("impulse response is the inverse transform of the transfer function", "[small_signal]") {
    const ConverterModel m = ff_buck(PwmKind::ff_trailing, 0.45, 3e4);
    const auto map = linearize(m, solve_periodic(m));
    const auto y = impulse_response(map, m.C_phys, 4000);
    for (Real w : {0.05, 0.7, 2.0}) {
        const Complex z = std::polar(1.0, w);
        Complex sum = 0.0;
        for (std::size_t k = 0; k < y.size(); ++k) sum += y[k] * std::pow(z, -static_cast<Real>(k));
        const Complex tf = control_to_output_tf(map, m.C_phys, z);
        CHECK(std::abs(sum - tf) / std::abs(tf) < 1e-9);
    }
}

TEST_CASE("COT control-to-output gain at f_s / 20 against injection", "[small_signal]") {
    const ConverterModel m = cot_buck();
    const auto op = solve_periodic(m);
    const Real f = 1.0 / (20.0 * op.period());
    const Complex a = frequency_response(linearize(m, op), m.C_phys, f, op.period());
    const Complex g = measure_frequency_response(m, op, f).gain;
    CHECK(std::abs(std::abs(g) - std::abs(a)) / std::abs(a) < 0.02);
    CHECK(std::abs(std::arg(g / a)) * 180.0 / M_PI < 2.0);
}

TEST_CASE("stability sweeps", "[small_signal][sweep]") {
    const PcmDesign d;
    const ModelFamily by_duty = [&](Real D) { return pcm_buck(d, D, 1e-9 * off_slope_ramp(d)); };

    CHECK(stability_sweep(by_duty, std::vector<Real>{}).empty());

    std::vector<Real> grid;
    for (int i = 0; i <= 20; ++i) grid.push_back(0.30 + 0.02 * i);
    const auto rows = stability_sweep(by_duty, grid);
    REQUIRE(rows.size() == grid.size());
    const auto bracket = stability_boundary(rows);
    REQUIRE(bracket.has_value());
    CHECK(bracket->first <= 0.5);
    CHECK(bracket->second >= 0.5);
    CHECK_FALSE(rows.front().unstable);
    CHECK(rows.back().unstable);
}

TEST_CASE("ramp sweep boundary matches period-doubling onset in the simulator", "[small_signal][sweep]") {
    const PcmDesign d;
    const ModelFamily by_ramp = [&](Real Se) { return pcm_buck(d, 0.6, Se); };
    const Real step = 2e3;
    std::vector<Real> grid;
    for (int i = 0; i <= 15; ++i) grid.push_back(step * i);
    const auto rows = stability_sweep(by_ramp, grid);
    const auto bracket = stability_boundary(rows);
    REQUIRE(bracket.has_value());

    std::optional<Real> onset;
    for (Real Se : grid) {
        const ConverterModel m = pcm_buck(d, 0.6, Se);
        if (!oracle_period_two(m, solve_periodic(m)).period_two) {
            onset = Se;
            break;
        }
    }
    REQUIRE(onset.has_value());
    CHECK(std::abs(*onset - bracket->second) <= step);
}

TEST_CASE("translation operator limits", "[duty]") {
    const Real Ts = 1e-6;
    const DutyOperatorSpec tr{DutyKind::translation, Ts, 0.4 * Ts};
    CHECK(duty_gain(tr, 0.0).real() == -tr.T_w / (Ts * Ts));
    CHECK(duty_gain(tr, 0.0).imag() == 0.0);
    const Complex low = duty_gain(tr, Complex(0.0, 2 * M_PI * 1e-6 / Ts));
    CHECK(std::abs(low - Complex(-0.4 / Ts, 0.0)) / (0.4 / Ts) < 1e-5);
    CHECK_THROWS_AS(duty_gain(tr, Complex(0.0, 2 * M_PI / Ts)), Error);
    CHECK_THROWS_AS(duty_gain({DutyKind::translation, Ts, 1.2 * Ts}, Complex(0.0, 1.0)), Error);
}

TEST_CASE("fixed-frequency edge shifts", "[duty]") {
    const Real Ts = 1e-6;
    const std::vector<Real> shift{10e-9};
    const auto up = duty_sequence_from_edges({DutyKind::ff_trailing_edge, Ts, 0.0}, shift);
    const auto down = duty_sequence_from_edges({DutyKind::ff_leading_edge, Ts, 0.0}, shift);
    CHECK(up.d_hat.at(0) == Catch::Approx(0.01).epsilon(1e-12));
    CHECK(down.d_hat.at(0) == Catch::Approx(-0.01).epsilon(1e-12));
    CHECK(duty_gain({DutyKind::ff_trailing_edge, Ts, 0.0}, Complex(0.0, 3e5)) == Complex(1.0 / Ts, 0.0));
    CHECK(duty_gain({DutyKind::ff_leading_edge, Ts, 0.0}, Complex(0.0, 3e5)) == Complex(-1.0 / Ts, 0.0));
}

TEST_CASE("translation duty sequences", "[duty]") {
    const Real Ts = 1e-6;
    const DutyOperatorSpec tr{DutyKind::translation, Ts, 0.4 * Ts};

    const auto zero = duty_sequence_from_edges(tr, std::vector<Real>(16, 0.0));
    for (Real d : zero.d_hat) CHECK(d == 0.0);

    const Real dt = 1e-4 * Ts;
    const auto held = duty_sequence_from_edges(tr, std::vector<Real>(16, dt));
    const Real expect = -dt * tr.T_w / (Ts * Ts);
    for (std::size_t n = 1; n + 1 < held.d_hat.size(); ++n) {
        CHECK(std::abs(held.d_hat[n] - expect) < 1e-3 * std::abs(expect));
    }
    CHECK(held.warnings.empty());
    CHECK_FALSE(duty_sequence_from_edges(tr, std::vector<Real>(4, 0.05 * Ts)).warnings.empty());

    std::vector<Real> clash(4, 0.0);
    clash[1] = 0.7 * Ts;
    try {
        (void)duty_sequence_from_edges(tr, clash);
        FAIL("expected edge collision");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::edge_collision);
    }
}

TEST_CASE("duty waveform spectrum follows the operator", "[duty]") {
    const Real Ts = 1e-6;
    const std::size_t N = 400;
    for (const DutyOperatorSpec spec : {DutyOperatorSpec{DutyKind::translation, Ts, 0.4 * Ts},
                                        DutyOperatorSpec{DutyKind::translation, Ts, 0.7 * Ts},
                                        DutyOperatorSpec{DutyKind::ff_trailing_edge, Ts, 0.0},
                                        DutyOperatorSpec{DutyKind::ff_leading_edge, Ts, 0.0}}) {
        // f_s / 10 and a few other whole-bin frequencies.
        for (std::size_t k : {40u, 3u, 117u, 190u}) {
            const Real w = 2 * M_PI * static_cast<Real>(k) / (static_cast<Real>(N) * Ts);
            std::vector<Real> s(N);
            for (std::size_t n = 0; n < N; ++n) s[n] = 1e-4 * Ts * std::sin(w * static_cast<Real>(n) * Ts);
            const Complex meas = duty_response_from_edges(spec, s, w);
            const Complex g = duty_gain(spec, Complex(0.0, w));
            CHECK(std::abs(std::abs(meas) - std::abs(g)) / std::abs(g) < 0.01);
            CHECK(std::abs(std::arg(meas / g)) * 180.0 / M_PI < 1.0);
        }
    }
}
