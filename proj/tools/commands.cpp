#include "commands.hpp"

#include "pwmsd/pwmsd.hpp"
#include "pwmsd/verification.hpp"

#include <cstdio>
#include <fstream>
#include <ostream>
#include <random>
#include <sstream>

namespace pwmsd::cli {

std::string format_real(Real v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    std::string s(buf);
    // snprintf follows LC_NUMERIC; the output format does not.
    for (char& c : s) {
        if (c == ',') c = '.';
    }
    return s;
}

namespace {

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) {
        if (c == '"') q += '"';
        q += c;
    }
    return q + "\"";
}

class Csv {
public:
    explicit Csv(const std::vector<std::string>& header) { row_strings(header); }

    void row_strings(const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) os_ << ',';
            os_ << csv_field(cells[i]);
        }
        os_ << '\n';
    }

    [[nodiscard]] std::string str() const { return os_.str(); }

private:
    std::ostringstream os_;
};

std::vector<std::string> state_names(const ConverterModel& m) {
    std::vector<std::string> names;
    for (Index i = 0; i < m.dim(); ++i) {
        const auto u = static_cast<std::size_t>(i);
        names.push_back(u < m.state_labels.size() && !m.state_labels[u].empty() ? m.state_labels[u]
                                                                                : "x_" + std::to_string(i + 1));
    }
    return names;
}

void kv(std::ostringstream& os, const std::string& key, Real v) { os << key << '=' << format_real(v) << '\n'; }
void kv(std::ostringstream& os, const std::string& key, const std::string& v) { os << key << '=' << v << '\n'; }

void kv_vector(std::ostringstream& os, const std::string& key, const Vector& v) {
    os << key << "=[";
    for (Index i = 0; i < v.size(); ++i) os << (i ? ", " : "") << format_real(v(i));
    os << "]\n";
}

Real mag_tol(const RunOptions& opt, Real fallback) { return opt.tol.value_or(fallback); }
Real phase_tol_deg(const RunOptions& opt, Real fallback) { return opt.tol ? 100.0 * *opt.tol : fallback; }

Real deg(Complex z) { return std::arg(z) * 180.0 / M_PI; }
Real db(Complex z) { return 20.0 * std::log10(std::abs(z)); }

struct Solved {
    ConverterModel model;
    PeriodicOperatingPoint op;
};

Solved solve(const Config& cfg) { return {cfg.model, solve_periodic(cfg.model)}; }

std::vector<Real> frequency_grid(const std::vector<Real>& explicit_grid, Real f_min, Real f_max, std::size_t points,
                                 Real default_lo, Real default_hi) {
    if (!explicit_grid.empty()) return explicit_grid;
    const Real lo = f_min > 0.0 ? f_min : default_lo;
    const Real hi = f_max > 0.0 ? f_max : default_hi;
    if (points == 0) throw ConfigError("frequency grid needs at least one point");
    if (!(hi >= lo)) throw ConfigError("frequency grid needs f_min <= f_max");
    return log_frequencies(lo, hi, points);
}

}  // namespace

CommandOutput run_steady(const Config& cfg, const RunOptions&) {
    const auto [m, op] = solve(cfg);
    std::ostringstream os;
    kv(os, "logic", std::string(to_string(m.pwm.kind)));
    const auto names = state_names(m);
    for (Index i = 0; i < m.dim(); ++i) kv(os, "x_star[" + names[static_cast<std::size_t>(i)] + "]", op.x_star(i));
    kv(os, "T_on_s", op.T_on_star);
    kv(os, "T_off_s", op.T_off_star);
    kv(os, "T_cycle_s", op.period());
    kv(os, "duty", op.T_on_star / op.period());
    kv(os, "y_star", (m.C_phys * op.x_star)(0));
    kv(os, "residual", op.residual_norm);
    kv(os, "iterations", static_cast<Real>(op.iterations));
    return {"steady.txt", os.str(), true};
}

CommandOutput run_eigen(const Config& cfg, const RunOptions&) {
    const auto [m, op] = solve(cfg);
    const LinearizedCycleMap map = linearize(m, op);
    const auto ev = closed_loop_eigenvalues(map);
    std::ostringstream os;
    for (std::size_t i = 0; i < ev.size(); ++i) {
        os << "lambda_" << i + 1 << '=' << format_real(ev[i].real()) << (ev[i].imag() < 0 ? "-" : "+")
           << format_real(std::abs(ev[i].imag())) << "j abs=" << format_real(std::abs(ev[i])) << '\n';
    }
    const Real r = spectral_radius(map);
    kv(os, "lambda_max", r);
    kv(os, "stable", r < 1.0 ? "true" : "false");
    if (map.timing_augmented) kv(os, "form", "timing-augmented (Se = 0)");
    for (const auto& w : map.warnings) kv(os, "warning", w);
    return {"eigen.txt", os.str(), true};
}

CommandOutput run_bode(const Config& cfg, const RunOptions& opt) {
    const auto [m, op] = solve(cfg);
    const Real T = op.period();
    const BodeRequest req = cfg.analysis.bode.value_or(BodeRequest{});
    const auto f = frequency_grid(req.f_hz, req.f_min, req.f_max, req.points, 1e-3 / T, 0.4 / T);
    for (Real fi : f) {
        if (!(fi > 0.0 && fi < 0.5 / T)) {
            throw ConfigError("analysis.bode: frequency " + format_real(fi) + " Hz is outside (0, 0.5 / T_cycle = " +
                              format_real(0.5 / T) + ")");
        }
    }
    const LinearizedCycleMap map = linearize(m, op);
    std::vector<std::string> header{"f_hz", "mag_db", "phase_deg"};
    if (opt.verify) {
        header.insert(header.end(), {"measured_mag_db", "measured_phase_deg", "mag_rel_err", "phase_err_deg"});
    }
    Csv csv(header);
    bool ok = true;
    for (Real fi : f) {
        const Complex a = frequency_response(map, m.C_phys, fi, T);
        std::vector<std::string> row{format_real(fi), format_real(db(a)), format_real(deg(a))};
        if (opt.verify) {
            const Complex g = measure_frequency_response(m, op, fi).gain;
            const Real mag_err = std::abs(std::abs(g) - std::abs(a)) / std::abs(a);
            const Real ph_err = std::abs(deg(g / a));
            ok = ok && mag_err <= mag_tol(opt, 0.02) && ph_err <= phase_tol_deg(opt, 2.0);
            row.insert(row.end(), {format_real(db(g)), format_real(deg(g)), format_real(mag_err), format_real(ph_err)});
        }
        csv.row_strings(row);
    }
    return {"bode.csv", csv.str(), ok};
}

CommandOutput run_sweep(const Config& cfg, const RunOptions&) {
    if (!cfg.analysis.sweep) throw ConfigError("sweep needs an [analysis.sweep] section");
    const SweepRequest& req = *cfg.analysis.sweep;
    const std::string& var = req.variable;
    const bool power_stage = var == "Vin" || var == "R" || var == "L_f" || var == "C_f" || var == "R_dcr" ||
                             var == "R_esr";
    if (power_stage && !cfg.buck) throw ConfigError("sweep variable '" + var + "' needs the buck preset");

    const ModelFamily family = [&](Real p) {
        Config c = cfg;
        if (var == "duty") {
            c.duty = p;
        } else if (var == "Se") {
            c.model.comparator.Se = p;
        } else if (var == "vc") {
            c.duty.reset();
            c.model.comparator.vc_nominal = p;
        } else {
            BuckParams& b = *c.buck;
            Real* fields[] = {&b.Vin, &b.R, &b.L_f, &b.C_f, &b.R_dcr, &b.R_esr};
            const char* names[] = {"Vin", "R", "L_f", "C_f", "R_dcr", "R_esr"};
            for (std::size_t i = 0; i < 6; ++i) {
                if (var == names[i]) *fields[i] = p;
            }
        }
        return rebuild_model(c);
    };
    const auto rows = stability_sweep(family, req.values);
    Csv csv({"param", "lambda_max", "stable", "error"});
    for (const auto& r : rows) {
        csv.row_strings({format_real(r.param), format_real(r.lambda_max), r.ok() ? (r.unstable ? "false" : "true") : "",
                         r.error});
    }
    return {"sweep.csv", csv.str(), true};
}

CommandOutput run_duty(const Config& cfg, const RunOptions& opt) {
    const DutyRequest req = cfg.analysis.duty.value_or(DutyRequest{});
    DutyOperatorSpec spec;
    std::string kind = req.kind;
    std::optional<PeriodicOperatingPoint> op;
    auto operating_point = [&]() -> const PeriodicOperatingPoint& {
        if (!op) op = solve_periodic(cfg.model);
        return *op;
    };
    if (kind.empty()) {
        switch (cfg.model.pwm.kind) {
        case PwmKind::ff_trailing: kind = "FF_TRAILING_EDGE"; break;
        case PwmKind::ff_leading: kind = "FF_LEADING_EDGE"; break;
        default: kind = "TRANSLATION"; break;
        }
    }
    spec.kind = kind == "FF_TRAILING_EDGE"  ? DutyKind::ff_trailing_edge
                : kind == "FF_LEADING_EDGE" ? DutyKind::ff_leading_edge
                                            : DutyKind::translation;
    spec.T_s = req.T_s ? *req.T_s : operating_point().period();
    spec.T_w = req.T_w ? *req.T_w : (req.T_s ? 0.5 * *req.T_s : operating_point().T_on_star);
    validate_duty_spec(spec);

    const Real Ts = spec.T_s;
    auto f = frequency_grid({}, req.f_min, req.f_max, req.points, 1e-3 / Ts, 0.45 / Ts);

    // Measured columns need a whole number of signal periods in the record:
    // each frequency gets its own record length and moves onto its nearest bin.
    std::vector<std::size_t> record(f.size(), 0);
    if (opt.verify) {
        for (std::size_t i = 0; i < f.size(); ++i) {
            const Real k = std::max<Real>(1.0, std::round(400.0 * f[i] * Ts));
            const Real n = std::clamp<Real>(std::round(k / (f[i] * Ts)), 2.0, 1e6);
            record[i] = static_cast<std::size_t>(n);
            f[i] = k / (n * Ts);
        }
    }

    std::vector<std::string> header{"f_hz", "re", "im", "mag", "phase_deg"};
    if (opt.verify) header.insert(header.end(), {"measured_mag", "measured_phase_deg", "mag_rel_err", "phase_err_deg"});
    Csv csv(header);
    bool ok = true;
    for (std::size_t i = 0; i < f.size(); ++i) {
        const Real fi = f[i];
        const Complex g = duty_gain(spec, Complex(0.0, 2.0 * M_PI * fi));
        std::vector<std::string> row{format_real(fi), format_real(g.real()), format_real(g.imag()),
                                     format_real(std::abs(g)), format_real(deg(g))};
        if (opt.verify) {
            const Real w = 2.0 * M_PI * fi;
            std::vector<Real> shifts(record[i]);
            for (std::size_t n = 0; n < shifts.size(); ++n) shifts[n] = 1e-4 * Ts * std::sin(w * static_cast<Real>(n) * Ts);
            const Complex meas = duty_response_from_edges(spec, shifts, w);
            const Real mag_err = std::abs(std::abs(meas) - std::abs(g)) / std::abs(g);
            const Real ph_err = std::abs(deg(meas / g));
            ok = ok && mag_err <= mag_tol(opt, 0.01) && ph_err <= phase_tol_deg(opt, 1.0);
            row.insert(row.end(), {format_real(std::abs(meas)), format_real(deg(meas)), format_real(mag_err),
                                   format_real(ph_err)});
        }
        csv.row_strings(row);
    }
    return {"duty.csv", csv.str(), ok};
}

CommandOutput run_distill(const Config& cfg, const RunOptions&) {
    const ConverterModel& m = cfg.model;
    const DistillRequest req = cfg.analysis.distill.value_or(DistillRequest{});
    Real T_on = 0.0, T_off = 0.0;
    if (req.T_on && req.T_off) {
        T_on = *req.T_on;
        T_off = *req.T_off;
    } else {
        const auto op = solve_periodic(m);
        T_on = req.T_on.value_or(op.T_on_star);
        T_off = req.T_off.value_or(op.T_off_star);
    }
    const DistilledModel dm = distill(m);
    const Real vin = m.on_segment.U(0);
    const DistilledDc dc = solve_distilled_dc(dm, vin, T_on, T_off);
    std::ostringstream os;
    for (Index i = 0; i < dm.A0.rows(); ++i) kv_vector(os, "A0_row" + std::to_string(i + 1), dm.A0.row(i).transpose());
    kv_vector(os, "Bu_on", dm.Bu_on);
    kv_vector(os, "Bu_off", dm.Bu_off);
    kv_vector(os, "By_on", dm.By_on);
    kv_vector(os, "By_off", dm.By_off);
    kv(os, "E_on_fro", dm.residual_on.norm());
    kv(os, "E_off_fro", dm.residual_off.norm());
    kv(os, "quality_on", dm.quality_on);
    kv(os, "quality_off", dm.quality_off);
    kv(os, "T_on_s", T_on);
    kv(os, "T_off_s", T_off);
    kv(os, "v_in", vin);
    kv(os, "v_o", dc.v_o);
    kv(os, "i_L_star", dc.i_L_star);
    kv(os, "i_L_sampled", dc.i_L_sampled);
    kv(os, "rank_I_minus_Phi_h", static_cast<Real>(dc.rank));
    kv(os, "v_C_free", dc.v_C_free ? "true" : "false");
    return {"distill.txt", os.str(), true};
}

CommandOutput run_simulate(const Config& cfg, const RunOptions&) {
    const ConverterModel& m = cfg.model;
    const SimulateRequest req = cfg.analysis.simulate.value_or(SimulateRequest{});
    SimStart start;
    if (req.x0) {
        if (static_cast<Index>(req.x0->size()) != m.dim()) {
            throw ConfigError("analysis.simulate.x0 has " + std::to_string(req.x0->size()) + " entries, model has " +
                              std::to_string(m.dim()) + " states");
        }
        start.x0 = Eigen::Map<const Vector>(req.x0->data(), m.dim());
    } else {
        const auto op = solve_periodic(m);
        start.x0 = op.x_star;
        start.previous_event_duration = event_duration(op, m.pwm.kind);
    }
    SimOptions so;
    so.dense_per_segment = req.dense;
    so.clamp_to_clock = req.clamp_to_clock;
    const auto tr = simulate_cycles(m, constant_control(m.comparator.vc_nominal), req.cycles, start, so);

    std::vector<std::string> header{"t_s"};
    for (const auto& n : state_names(m)) header.push_back(n);
    header.insert(header.end(), {"cycle", "edge_kind"});
    Csv csv(header);
    for (const auto& s : tr.samples) {
        std::vector<std::string> row{format_real(s.t)};
        for (Index i = 0; i < s.x.size(); ++i) row.push_back(format_real(s.x(i)));
        row.push_back(std::to_string(s.cycle));
        row.emplace_back(to_string(s.kind));
        csv.row_strings(row);
    }
    return {"simulate.csv", csv.str(), true};
}

namespace {

void append(std::vector<CheckResult>& dst, std::vector<CheckResult> src, const std::string& prefix = {}) {
    for (auto& c : src) {
        if (!prefix.empty()) c.name = prefix + c.name;
        dst.push_back(std::move(c));
    }
}

/// A perturbed unstable orbit has to leave the fixed point in the simulator.
CheckResult unstable_orbit_check(const ConverterModel& m, const PeriodicOperatingPoint& op, Real lambda_max) {
    const auto rep = oracle_period_two(m, op);
    bool departed = rep.period_two;
    std::string detail = "period-2 gap " + format_real(rep.cluster_gap);
    if (!departed) {
        Vector x0 = op.x_star;
        x0(0) *= 1.0 + 1e-6;
        const Real d0 = (x0 - op.x_star).norm();
        try {
            SimOptions so;
            so.clamp_to_clock = true;
            const auto tr = simulate_cycles(m, constant_control(m.comparator.vc_nominal), 400,
                                            {x0, event_duration(op, m.pwm.kind)}, so);
            const Real d1 = (tr.cycle_edges.back().x - op.x_star).norm();
            departed = d1 > 100.0 * d0;
            detail += ", deviation growth " + format_real(d1 / d0);
        } catch (const Error& e) {
            departed = true;  // divergence or loss of the event
            detail += std::string(", ") + e.what();
        }
    }
    return make_flag("unstable orbit (|lambda|max = " + format_real(lambda_max) + ") leaves the fixed point in simulator",
                     departed, detail);
}

}  // namespace

CommandOutput run_verify(const Config& cfg, const RunOptions& opt) {
    const VerifyRequest req = cfg.analysis.verify.value_or(VerifyRequest{});
    const std::uint64_t seed = opt.seed.value_or(req.seed);
    const ConverterModel& m = cfg.model;
    std::vector<CheckResult> checks;

    append(checks, verify_propagators(seed), "propagator: ");
    append(checks, verify_composition(seed), "composition: ");

    const PeriodicOperatingPoint op = solve_periodic(m);
    append(checks, verify_jacobian_blocks(m, op), "config model: ");
    std::mt19937_64 rng(seed);
    for (int i = 0; i < req.random_designs; ++i) {
        const ConverterModel d = random_buck_design(rng, m.pwm.kind);
        append(checks, verify_jacobian_blocks(d, solve_periodic(d)), "random design " + std::to_string(i + 1) + ": ");
    }
    const Real lambda_max = spectral_radius(linearize(m, op));
    checks.push_back(verify_orbit_closure(m, op));
    if (lambda_max < 1.0) {
        checks.push_back(verify_steady_state(m, op));
        append(checks, verify_transfer_function(m, op, req.injection_points), "config model: ");
    } else {
        checks.push_back(unstable_orbit_check(m, op, lambda_max));
    }

    append(checks, verify_subharmonic_boundary(), "peak current mode: ");

    const Real Ts = op.period();
    append(checks, verify_duty_mapping(Ts, op.T_on_star / Ts), "duty mapping: ");

    BuckParams p = cfg.buck.value_or(BuckParams{});
    append(checks, verify_distillation_ideal(p, Ts, op.T_on_star / Ts), "distillation (ideal buck): ");
    if (p.R_dcr == 0.0) p.R_dcr = 0.05;
    const ConverterModel lossy = build_buck(p, m.pwm, m.comparator);
    append(checks, verify_distillation_model(lossy, op.T_on_star, op.T_off_star), "distillation (lossy buck): ");
    if (!cfg.buck && m.dim() == 2 && m.on_segment.B.cols() == 1) {
        append(checks, verify_distillation_model(m, op.T_on_star, op.T_off_star), "distillation (config model): ");
    }

    Csv csv({"check", "deviation", "threshold", "passed", "detail"});
    for (const auto& c : checks) {
        csv.row_strings({c.name, format_real(c.deviation), format_real(c.threshold), c.passed ? "true" : "false",
                         c.detail});
    }
    return {"verify.csv", csv.str(), all_passed(checks)};
}

CommandOutput run_command(std::string_view command, const Config& cfg, const RunOptions& opt) {
    if (command == "steady") return run_steady(cfg, opt);
    if (command == "eigen") return run_eigen(cfg, opt);
    if (command == "bode") return run_bode(cfg, opt);
    if (command == "sweep") return run_sweep(cfg, opt);
    if (command == "duty") return run_duty(cfg, opt);
    if (command == "distill") return run_distill(cfg, opt);
    if (command == "simulate") return run_simulate(cfg, opt);
    if (command == "verify") return run_verify(cfg, opt);
    throw ConfigError("unknown command '" + std::string(command) + "'");
}

int execute(std::string_view command, const std::filesystem::path& config_path, bool lenient, const RunOptions& opt,
            std::ostream& out, std::ostream& err) {
    Config cfg;
    try {
        cfg = parse_config(config_path, {lenient});
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << '\n';
        return exit_config;
    } catch (const Error& e) {
        err << "error: " << config_path.string() << ": " << e.what() << '\n';
        return e.code() == ErrorCode::invalid_parameter ? exit_config : exit_solver;
    }
    for (const auto& w : cfg.warnings) err << "warning: " << w << '\n';

    CommandOutput result;
    try {
        result = run_command(command, cfg, opt);
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << '\n';
        return exit_config;
    } catch (const Error& e) {
        err << "error: " << command << ": " << e.what() << '\n';
        return exit_solver;
    }

    if (opt.out_dir) {
        std::error_code ec;
        std::filesystem::create_directories(*opt.out_dir, ec);
        const auto path = *opt.out_dir / result.file_name;
        std::ofstream f(path, std::ios::binary);
        f << result.text;
        if (!f) {
            err << "error: cannot write " << path.string() << '\n';
            return exit_config;
        }
        err << "wrote " << path.string() << '\n';
    } else {
        out << result.text;
    }
    if (!result.passed) {
        err << "error: " << command << ": verification thresholds exceeded\n";
        return exit_verify;
    }
    return exit_ok;
}

}  // namespace pwmsd::cli
