#include "support.hpp"

#include "commands.hpp"
#include "config.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace pwmsd;
using namespace pwmsd::cli;
namespace fs = std::filesystem;

namespace {

const fs::path config_dir{PWMSD_CONFIG_DIR};

struct Run {
    int code;
    std::string out, err;
};

Run run(std::string_view cmd, const fs::path& cfg, RunOptions opt = {}, bool lenient = false) {
    std::ostringstream out, err;
    const int code = execute(cmd, cfg, lenient, opt, out, err);
    return {code, out.str(), err.str()};
}

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("pwmsd_cli_" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    fs::path write(const std::string& name, const std::string& text) const {
        const fs::path p = path / name;
        std::ofstream(p) << text;
        return p;
    }
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

std::string cot_text(const std::string& buck_extra = "", const std::string& top_extra = "") {
    return "model:\n  preset: buck\n  buck:\n    Vin: 12.0\n    L_f: 10.0e-6\n    C_f: 100.0e-6\n    R: 1.0\n" +
           buck_extra + "pwm:\n  kind: COT\n  fixed_duration: 4.0e-6\ncomparator:\n  current_sense:\n    R_sense: 0.1\n"
           "  Se: 1.0e4\n  duty: 0.4\n" + top_extra;
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST_CASE("shipped COT config builds the ideal buck", "[cli]") {
    const Config cfg = parse_config(config_dir / "buck_cot.cfg");
    const ConverterModel ref = with_duty(
        build_buck({}, {PwmKind::cot, 4.0e-6}, current_mode_comparator(2, PwmKind::cot, 0.1, 1.0e4)), 0.4);
    CHECK(cfg.model.on_segment.A == ref.on_segment.A);
    CHECK(cfg.model.off_segment.A == ref.off_segment.A);
    CHECK(cfg.model.on_segment.forcing() == ref.on_segment.forcing());
    CHECK(cfg.model.comparator.K == ref.comparator.K);
    CHECK(cfg.model.comparator.vc_nominal == ref.comparator.vc_nominal);
    CHECK(cfg.model.pwm.kind == PwmKind::cot);
    REQUIRE(cfg.analysis.sweep);
    CHECK(cfg.analysis.sweep->variable == "Se");
}

TEST_CASE("invalid parameters name their key", "[cli]") {
    TempDir tmp;
    std::string text = cot_text();
    text.replace(text.find("L_f: 10.0e-6"), 12, "L_f: -1.0e-6");
    const auto r = run("steady", tmp.write("neg.cfg", text));
    CHECK(r.code == exit_config);
    CHECK_THAT(r.err, Catch::Matchers::ContainsSubstring("invalid parameter"));
    CHECK_THAT(r.err, Catch::Matchers::ContainsSubstring("model.buck.L_f"));
}

TEST_CASE("serialized configs parse back to the same model", "[cli]") {
    for (const auto& entry : fs::directory_iterator(config_dir)) {
        if (entry.path().extension() != ".cfg") continue;
        CAPTURE(entry.path().filename().string());
        const Config a = parse_config(entry.path());
        const Config b = parse_config_text(serialize_config(a), "round-trip");
        CHECK(a.model.on_segment.A == b.model.on_segment.A);
        CHECK(a.model.off_segment.A == b.model.off_segment.A);
        CHECK(a.model.on_segment.B == b.model.on_segment.B);
        CHECK(a.model.off_segment.B == b.model.off_segment.B);
        CHECK(a.model.on_segment.U == b.model.on_segment.U);
        CHECK(a.model.C_phys == b.model.C_phys);
        CHECK(a.model.comparator.K == b.model.comparator.K);
        CHECK(a.model.comparator.Se == b.model.comparator.Se);
        CHECK(a.model.comparator.vc_nominal == b.model.comparator.vc_nominal);
        CHECK(a.model.pwm.kind == b.model.pwm.kind);
        CHECK(a.model.pwm.fixed_duration == b.model.pwm.fixed_duration);
    }
}

TEST_CASE("unknown keys", "[cli]") {
    const std::string text = cot_text("    Rload: 2.0\n");
    try {
        (void)parse_config_text(text, "typo.cfg");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK_THAT(std::string(e.what()), Catch::Matchers::ContainsSubstring("model.buck.Rload"));
        CHECK_THAT(std::string(e.what()), Catch::Matchers::ContainsSubstring("typo.cfg:8"));
    }
    ParseOptions lenient;
    lenient.lenient = true;
    const Config cfg = parse_config_text(text, "typo.cfg", lenient);
    REQUIRE(cfg.warnings.size() == 1);
    CHECK_THAT(cfg.warnings.front(), Catch::Matchers::ContainsSubstring("Rload"));

    TempDir tmp;
    const fs::path p = tmp.write("typo.cfg", text);
    CHECK(run("steady", p).code == exit_config);
    const auto r = run("steady", p, {}, true);
    CHECK(r.code == exit_ok);
    CHECK_THAT(r.err, Catch::Matchers::ContainsSubstring("Rload"));
}

TEST_CASE("eigen reports the unstable peak-current design", "[cli]") {
    const auto r = run("eigen", config_dir / "buck_pcm_d055.cfg");
    CHECK(r.code == exit_ok);
    CHECK_THAT(r.out, Catch::Matchers::ContainsSubstring("stable=false"));
    CHECK_THAT(run("eigen", config_dir / "buck_pcm_ff.cfg").out, Catch::Matchers::ContainsSubstring("stable=true"));
}

TEST_CASE("bode output", "[cli]") {
    const fs::path cfg = config_dir / "buck_explicit.cfg";
    const auto a = run("bode", cfg);
    REQUIRE(a.code == exit_ok);
    CHECK(a.out.rfind("f_hz,mag_db,phase_deg\n", 0) == 0);
    CHECK(count_lines(a.out) == 1 + parse_config(cfg).analysis.bode->points);
    CHECK(a.out.find('\r') == std::string::npos);

    const auto b = run("bode", cfg);
    CHECK(a.out == b.out);

    TempDir tmp;
    RunOptions opt;
    opt.out_dir = tmp.path;
    CHECK(run("bode", cfg, opt).code == exit_ok);
    CHECK(slurp(tmp.path / "bode.csv") == a.out);
}

TEST_CASE("exit codes", "[cli]") {
    TempDir tmp;
    CHECK(run("steady", config_dir / "buck_cot.cfg").code == exit_ok);
    CHECK(run("steady", tmp.path / "missing.cfg").code == exit_config);
    CHECK(run("sweep", config_dir / "buck_explicit.cfg").code == exit_config);

    std::string far = cot_text();
    far.replace(far.find("duty: 0.4"), 9, "vc: 1.0e6");
    CHECK(run("steady", tmp.write("far.cfg", far)).code == exit_solver);

    const fs::path bode = tmp.write("bode.cfg", cot_text("", "analysis:\n  bode:\n    points: 3\n"));
    RunOptions opt;
    opt.verify = true;
    CHECK(run("bode", bode, opt).code == exit_ok);
    opt.tol = 1e-9;
    const auto strict = run("bode", bode, opt);
    CHECK(strict.code == exit_verify);
    CHECK_THAT(strict.out, Catch::Matchers::ContainsSubstring("measured_mag_db"));
}
