#include "support.hpp"

using namespace pwmsd;
using namespace pwmsd::test;
using Catch::Matchers::ContainsSubstring;

namespace {

PwlSegment segment(Matrix A, Vector b) {
    const Index n = A.rows();
    return {std::move(A), b.reshaped(n, 1), Vector::Ones(1), "s"};
}

Matrix nilpotent_kernel(Real C_f) {
    Matrix A0 = Matrix::Zero(2, 2);
    A0(1, 0) = 1.0 / C_f;
    return A0;
}

}  // namespace

TEST_CASE("zero dynamics integrate a constant forcing", "[segment]") {
    Vector b(3);
    b << 2.0, -1.0, 0.5;
    const auto p = propagator(segment(Matrix::Zero(3, 3), b), 0.7);
    CHECK(rel(p.phi, Matrix::Identity(3, 3)) < 1e-15);
    CHECK(rel(p.gamma, 0.7 * b) < 1e-15);

    const auto d = propagator_time_derivatives(segment(Matrix::Zero(3, 3), b), 0.7);
    CHECK(d.dphi_dt.norm() == 0.0);
    CHECK(rel(d.dgamma_dt, b) < 1e-15);
}

TEST_CASE("nilpotent kernel has polynomial propagators", "[segment]") {
    const Matrix A0 = nilpotent_kernel(100e-6);
    Vector b(2);
    b << 7.2e5, -4.8e4;
    for (Real T : {1e-7, 4e-6, 1e-5, 3e-4}) {
        const auto p = propagator(segment(A0, b), T);
        const Matrix I = Matrix::Identity(2, 2);
        CHECK(rel(p.phi, I + A0 * T) < 1e-14);
        CHECK(rel(p.gamma, (T * I + 0.5 * T * T * A0) * b) < 1e-14);
        // A0 (I + A0 T) collapses to A0.
        CHECK(rel(propagator_time_derivatives(segment(A0, b), T).dphi_dt, A0) < 1e-14);
    }
}

TEST_CASE("forced response matches quadrature and the closed form", "[segment]") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 10; ++trial) {
        const Matrix A = random_matrix(rng, 2, 2);
        if (std::abs(A.determinant()) < 1e-2) continue;
        const Vector b = random_matrix(rng, 2, 1);
        const auto p = propagator(segment(A, b), 0.3);
        CHECK(rel(p.gamma, oracle::forced_response_quadrature(A, b, 0.3)) < 1e-10);
        // A^-1 (e^{AT} - I) b with the exponential taken from an independent Taylor series.
        const Matrix E = oracle::expm_taylor(A * 0.3);
        CHECK(rel(p.gamma, A.fullPivLu().solve((E - Matrix::Identity(2, 2)) * b)) < 1e-12);
        CHECK(rel(p.phi, E) < 1e-13);
    }
}

TEST_CASE("time derivatives agree with central differences", "[segment]") {
    std::mt19937_64 rng(5);
    const Matrix A = random_matrix(rng, 2, 2);
    const Vector b = random_matrix(rng, 2, 1);
    const PwlSegment s = segment(A, b);
    const Real T = 0.1, h = 1e-6;
    const auto d = propagator_time_derivatives(s, T);
    const auto pp = propagator(s, T + h), pm = propagator(s, T - h);
    CHECK(rel(d.dphi_dt, (pp.phi - pm.phi) / (2 * h)) < 1e-6);
    CHECK(rel(d.dgamma_dt, (pp.gamma - pm.gamma) / (2 * h)) < 1e-6);
}

TEST_CASE("propagators obey the semigroup law", "[segment][property]") {
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<Real> dur(0.0, 0.8);
    for (int trial = 0; trial < 50; ++trial) {
        const Index n = 2 + trial % 3;
        const PwlSegment s = segment(random_matrix(rng, n, n), random_matrix(rng, n, 1));
        const Real t1 = dur(rng), t2 = dur(rng);
        const auto a = propagator(s, t1), b = propagator(s, t2), ab = propagator(s, t1 + t2);
        const Matrix phi = b.phi * a.phi;
        const Vector gamma = b.phi * a.gamma + b.gamma;
        CHECK(rel(ab.phi, phi) < 1e-12);
        CHECK(rel(ab.gamma, gamma) < 1e-12);
    }
}

TEST_CASE("propagator rejects bad input", "[segment]") {
    const PwlSegment s = segment(Matrix::Identity(2, 2), Vector::Ones(2));
    CHECK_THROWS_AS(propagator(s, -1e-9), Error);
    CHECK_THROWS_AS(propagator(s, NAN), Error);
    PwlSegment bad = s;
    bad.B = Matrix::Ones(3, 1);
    CHECK_THROWS_AS(propagator(bad, 1.0), Error);
    PwlSegment huge = segment(Matrix::Identity(2, 2) * 1e4, Vector::Ones(2));
    try {
        (void)propagator(huge, 1.0);
        FAIL("expected overflow");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::propagation_overflow);
    }
}

TEST_CASE("composition follows the reverse-product expansion", "[segment]") {
    std::mt19937_64 rng(99);
    std::vector<TimedSegment> segs;
    std::vector<Propagator> p;
    for (int i = 0; i < 4; ++i) {
        segs.push_back({segment(random_matrix(rng, 3, 3), random_matrix(rng, 3, 1)), 0.1 + 0.2 * i});
        p.push_back(propagator(segs.back().segment, segs.back().duration));
    }
    const Vector x0 = random_matrix(rng, 3, 1);

    const auto one = compose(std::span(segs).first(1), x0);
    CHECK(rel(one.x_end, p[0].phi * x0 + p[0].gamma) < 1e-15);

    const Vector expect = p[3].phi * p[2].phi * p[1].phi * p[0].phi * x0 + p[3].phi * p[2].phi * p[1].phi * p[0].gamma +
                          p[3].phi * p[2].phi * p[1].gamma + p[3].phi * p[2].gamma + p[3].gamma;
    const auto four = compose(segs, x0);
    CHECK(rel(four.x_end, expect) < 1e-14);
    REQUIRE(four.boundary_states.size() == 4);
    CHECK(rel(four.boundary_states[1], p[1].phi * (p[0].phi * x0 + p[0].gamma) + p[1].gamma) < 1e-14);

    std::vector<TimedSegment> padded{{segs[2].segment, 0.0}, {segs[0].segment, 0.0}};
    padded.insert(padded.end(), segs.begin(), segs.end());
    CHECK(compose(padded, x0).x_end == four.x_end);
}

TEST_CASE("ideal buck construction", "[converter]") {
    const BuckParams p = nominal_buck();
    const ConverterModel m = cot_buck();
    Vector bu(2);
    bu << 12.0 / p.L_f, 0.0;
    CHECK(rel(m.on_segment.forcing(), bu) < 1e-15);
    CHECK(m.off_segment.forcing().isZero(0.0));
    CHECK(m.C_phys(0) == 0.0);
    CHECK(m.C_phys(1) == 1.0);
    CHECK(validate(m).empty());
    CHECK(m.on_segment.A == m.off_segment.A);
}

TEST_CASE("ESR divider output row matches nodal analysis", "[converter]") {
    BuckParams p = nominal_buck();
    p.R_esr = 0.02;
    p.R_dcr = 0.03;
    const ConverterModel m = cot_buck(0.4, 1e4, p);
    const std::array<std::array<Real, 2>, 3> states{{{4.0, 5.0}, {-1.5, 3.3}, {10.0, 0.0}}};
    for (const auto& [iL, vC] : states) {
        Vector x(2);
        x << iL, vC;
        // i_L = (v_o - v_C) / R_esr + v_o / R solved for v_o.
        const Real vo = (iL + vC / p.R_esr) / (1.0 / p.R + 1.0 / p.R_esr);
        CHECK((m.C_phys * x)(0) == Catch::Approx(vo).epsilon(1e-14));
    }
}

TEST_CASE("model validation diagnostics", "[converter]") {
    ConverterModel m = cot_buck();
    m.comparator.K.setZero();
    const auto d = validate(m);
    REQUIRE(d.size() == 1);
    CHECK(d.front() == "comparator row K is zero");

    ConverterModel w = cot_buck();
    w.off_segment.A = Matrix::Zero(3, 3);
    const auto dw = validate(w);
    REQUIRE_FALSE(dw.empty());
    CHECK_THAT(dw.front(), ContainsSubstring("dimension"));

    BuckParams p = nominal_buck();
    p.L_f = -1e-6;
    try {
        (void)build_buck(p, {PwmKind::cot, 4e-6}, current_mode_comparator(2, PwmKind::cot, 0.1, 0.0));
        FAIL("expected invalid parameter");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::invalid_parameter);
        CHECK_THAT(e.what(), ContainsSubstring("L_f"));
    }
}

TEST_CASE("PWM timing conventions", "[converter]") {
    CHECK(leading_duration(PwmLogic{PwmKind::cot, 4e-6}, 123.0) == 4e-6);
    CHECK(leading_duration(PwmLogic{PwmKind::ff_trailing, 10e-6}, 4.5e-6) == Catch::Approx(5.5e-6));
    CHECK(event_duration_for_duty({PwmKind::cot, 4e-6}, 0.4) == Catch::Approx(6e-6));
    CHECK(event_duration_for_duty({PwmKind::coft, 6e-6}, 0.4) == Catch::Approx(4e-6));
    CHECK(event_duration_for_duty({PwmKind::ff_trailing, 10e-6}, 0.45) == Catch::Approx(4.5e-6));
    CHECK(event_duration_for_duty({PwmKind::ff_leading, 10e-6}, 0.45) == Catch::Approx(5.5e-6));
    CHECK_THROWS_AS(event_duration_for_duty({PwmKind::cot, 4e-6}, 1.2), Error);
    CHECK(parse_pwm_kind("FF_LEADING") == PwmKind::ff_leading);
    CHECK_FALSE(parse_pwm_kind("ff_leading").has_value());
}

TEST_CASE("fixed point of a decaying scalar segment", "[steady]") {
    const Real a = 3.0;
    Vector b(2);
    b << 1.5, -6.0;
    for (Real T : {0.01, 0.5, 4.0}) {
        const std::array<TimedSegment, 1> cyc{TimedSegment{segment(-a * Matrix::Identity(2, 2), b), T}};
        // (I - e^{-aT})^-1 Gamma = b / a for every T.
        CHECK(rel(fixed_point_fixed_timing(cyc), b / a) < 1e-12);
    }
}

TEST_CASE("distilled kernel cycle has no unique fixed point", "[steady]") {
    Vector b(2);
    b << 1.0, 0.0;
    const std::array<TimedSegment, 2> cyc{TimedSegment{segment(nilpotent_kernel(100e-6), b), 4e-6},
                                          TimedSegment{segment(nilpotent_kernel(100e-6), -b), 6e-6}};
    try {
        (void)fixed_point_fixed_timing(cyc);
        FAIL("expected marginal periodic solution");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::marginal_periodic_solution);
        CHECK_THAT(e.what(), ContainsSubstring("periodic solution not unique or marginal"));
    }
}

TEST_CASE("ideal buck cycle average sits at D Vin", "[steady]") {
    const ConverterModel m = cot_buck();
    const std::array<TimedSegment, 2> cyc{TimedSegment{m.on_segment, 0.4 * T_s},
                                          TimedSegment{m.off_segment, 0.6 * T_s}};
    const Vector x = fixed_point_fixed_timing(cyc);
    // Trapezoid average of v_C over a densely reconstructed cycle.
    const int N = 400;
    Real sum = 0.0;
    Vector prev = x;
    for (int k = 1; k <= N; ++k) {
        const Real t = T_s * k / N;
        const Vector cur = t <= 0.4 * T_s ? advance(propagator(m.on_segment, t), x)
                                          : advance(propagator(m.off_segment, t - 0.4 * T_s),
                                                    advance(propagator(m.on_segment, 0.4 * T_s), x));
        sum += 0.5 * (prev(1) + cur(1)) / N;
        prev = cur;
    }
    CHECK(std::abs(sum - 4.8) / 4.8 < 0.01);
}

TEST_CASE("COT operating point closes after one simulated cycle", "[steady]") {
    const ConverterModel m = cot_buck();
    const auto op = solve_periodic(m);
    CHECK(op.T_on_star == Catch::Approx(4e-6).epsilon(1e-12));
    CHECK(op.T_on_star / op.period() == Catch::Approx(0.4).epsilon(1e-9));
    const auto s = step_cycle(m, op.x_star, 0.0, m.comparator.vc_nominal);
    CHECK(rel(s.x_next, op.x_star) < 1e-9);
}

TEST_CASE("uncompensated peak current mode at D = 0.45", "[steady]") {
    const ConverterModel m = ff_buck(PwmKind::ff_trailing, 0.45, 0.0);
    const auto op = solve_periodic(m);
    const Real D = op.T_on_star / T_s;
    CHECK(D > 0.44);
    CHECK(D < 0.46);

    // Reference duty from marching the simulator from a disturbed start.
    SimOptions so;
    so.stop_when_converged = true;
    Vector x0 = op.x_star;
    x0(0) *= 1.01;
    const auto tr = simulate_cycles(m, constant_control(m.comparator.vc_nominal), 20000, {x0, 0.5 * T_s}, so);
    REQUIRE(tr.converged);
    CHECK(tr.cycle_edges.back().event_duration / T_s == Catch::Approx(D).epsilon(1e-8));
}

TEST_CASE("COFT operating point satisfies the event equation", "[steady]") {
    BuckParams p = nominal_buck();
    p.R_dcr = 0.02;
    p.R_esr = 0.01;
    const ConverterModel m = coft_buck(0.4, 1e4, p);
    const auto op = solve_periodic(m);
    const auto& c = m.comparator;
    const Real g = (c.K * op.x_star)(0) - c.vc_nominal - c.Se * op.T_on_star;
    CHECK(std::abs(g) < 1e-9 * std::abs(c.vc_nominal));
}

TEST_CASE("operating points are cycle invariant across random designs", "[steady][property]") {
    std::mt19937_64 rng(77);
    for (PwmKind kind : {PwmKind::cot, PwmKind::coft, PwmKind::ff_trailing, PwmKind::ff_leading}) {
        for (int i = 0; i < 4; ++i) {
            const ConverterModel m = random_buck_design(rng, kind);
            const auto op = solve_periodic(m);
            const auto s = step_cycle(m, op.x_star, event_duration(op, kind), m.comparator.vc_nominal);
            CHECK(rel(s.x_next, op.x_star) < 1e-9);
            CHECK(s.t_event == Catch::Approx(event_duration(op, kind)).epsilon(1e-8));
        }
    }
}

TEST_CASE("unreachable set point is reported", "[steady]") {
    ConverterModel m = cot_buck();
    m.comparator.vc_nominal = 1e3;  // far beyond any inductor current
    CHECK_THROWS_AS(solve_periodic(m), Error);
}
