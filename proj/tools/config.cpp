#include "config.hpp"

#include "pwmsd/steady_state.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <initializer_list>
#include <sstream>

namespace pwmsd::cli {

namespace {

struct Ctx {
    std::string source;
    bool lenient = false;
    std::vector<std::string>* warnings = nullptr;

    [[nodiscard]] std::string where(const YAML::Node& n) const {
        const auto m = n.Mark();
        if (m.line < 0) return source;
        return source + ":" + std::to_string(m.line + 1);
    }
    [[noreturn]] void fail(const YAML::Node& n, const std::string& msg) const {
        throw ConfigError(where(n) + ": " + msg);
    }
};

std::string join(const std::string& path, const std::string& key) {
    return path.empty() ? key : path + "." + key;
}

void check_keys(const Ctx& c, const YAML::Node& n, const std::string& path, std::initializer_list<const char*> allowed) {
    if (!n.IsMap()) c.fail(n, "'" + path + "' must be a mapping");
    for (const auto& kv : n) {
        const auto key = kv.first.as<std::string>();
        const bool known = std::any_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; });
        if (known) continue;
        const std::string msg = c.where(kv.first) + ": unknown key '" + join(path, key) + "'";
        if (!c.lenient) throw ConfigError(msg);
        c.warnings->push_back(msg);
    }
}

Real as_real(const Ctx& c, const YAML::Node& n, const std::string& path) {
    if (!n.IsScalar()) c.fail(n, "key '" + path + "' expects a number");
    try {
        return n.as<Real>();
    } catch (const YAML::Exception&) {
        c.fail(n, "key '" + path + "' expects a number, got '" + n.Scalar() + "'");
    }
}

std::size_t as_count(const Ctx& c, const YAML::Node& n, const std::string& path) {
    const Real v = as_real(c, n, path);
    if (!(v >= 0.0) || v != std::floor(v) || v > 1e9) c.fail(n, "key '" + path + "' expects a non-negative integer");
    return static_cast<std::size_t>(v);
}

std::string as_string(const Ctx& c, const YAML::Node& n, const std::string& path) {
    if (!n.IsScalar()) c.fail(n, "key '" + path + "' expects a string");
    return n.Scalar();
}

bool as_bool(const Ctx& c, const YAML::Node& n, const std::string& path) {
    try {
        return n.as<bool>();
    } catch (const YAML::Exception&) {
        c.fail(n, "key '" + path + "' expects true or false");
    }
}

YAML::Node require(const Ctx& c, const YAML::Node& parent, const std::string& path, const char* key) {
    const YAML::Node n = parent[key];
    if (!n) c.fail(parent, "missing required key '" + join(path, key) + "'");
    return n;
}

std::vector<Real> as_list(const Ctx& c, const YAML::Node& n, const std::string& path) {
    if (!n.IsSequence()) c.fail(n, "key '" + path + "' expects a list of numbers");
    std::vector<Real> out;
    for (std::size_t i = 0; i < n.size(); ++i) out.push_back(as_real(c, n[i], path + "[" + std::to_string(i) + "]"));
    return out;
}

Vector as_vector(const Ctx& c, const YAML::Node& n, const std::string& path) {
    const auto v = as_list(c, n, path);
    return Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size()));
}

Matrix as_matrix(const Ctx& c, const YAML::Node& n, const std::string& path) {
    if (!n.IsSequence() || n.size() == 0) c.fail(n, "key '" + path + "' expects a list of rows");
    std::vector<std::vector<Real>> rows;
    for (std::size_t i = 0; i < n.size(); ++i) rows.push_back(as_list(c, n[i], path + "[" + std::to_string(i) + "]"));
    const std::size_t cols = rows.front().size();
    Matrix M(static_cast<Index>(rows.size()), static_cast<Index>(cols));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != cols) c.fail(n[i], "rows of '" + path + "' have different lengths");
        for (std::size_t j = 0; j < cols; ++j) M(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
    }
    return M;
}

PwlSegment parse_segment(const Ctx& c, const YAML::Node& n, const std::string& path, const char* default_label) {
    check_keys(c, n, path, {"A", "B", "U", "label"});
    PwlSegment s;
    s.A = as_matrix(c, require(c, n, path, "A"), join(path, "A"));
    s.B = as_matrix(c, require(c, n, path, "B"), join(path, "B"));
    s.U = as_vector(c, require(c, n, path, "U"), join(path, "U"));
    s.label = n["label"] ? as_string(c, n["label"], join(path, "label")) : default_label;
    return s;
}

BuckParams parse_buck(const Ctx& c, const YAML::Node& n, const std::string& path) {
    check_keys(c, n, path, {"Vin", "L_f", "C_f", "R", "R_dcr", "R_esr"});
    BuckParams p;
    auto field = [&](const char* key, Real& dst, bool required, bool positive) {
        const YAML::Node v = required ? require(c, n, path, key) : n[key];
        if (!v) return;
        dst = as_real(c, v, join(path, key));
        const bool ok = std::isfinite(dst) && (positive ? dst > 0.0 : dst >= 0.0);
        if (!ok && std::string(key) != "Vin") {
            c.fail(v, "key '" + join(path, key) + "': invalid parameter: " + key + (positive ? " must be > 0" : " must be >= 0"));
        }
        if (!std::isfinite(dst)) c.fail(v, "key '" + join(path, key) + "': invalid parameter: must be finite");
    };
    field("Vin", p.Vin, true, false);
    field("L_f", p.L_f, true, true);
    field("C_f", p.C_f, true, true);
    field("R", p.R, true, true);
    field("R_dcr", p.R_dcr, false, false);
    field("R_esr", p.R_esr, false, false);
    return p;
}

struct ModelSection {
    std::optional<BuckParams> buck;
    PwlSegment on, off;
    RowVector C_phys;
    std::vector<std::string> labels;
    std::string description;
};

ModelSection parse_model(const Ctx& c, const YAML::Node& n) {
    check_keys(c, n, "model", {"preset", "buck", "on_segment", "off_segment", "C_phys", "state_labels", "description"});
    ModelSection ms;
    std::string preset;
    if (n["preset"]) preset = as_string(c, n["preset"], "model.preset");
    if (!preset.empty() && preset != "buck") c.fail(n["preset"], "key 'model.preset': unknown preset '" + preset + "'");
    if (preset == "buck" || n["buck"]) {
        if (n["on_segment"] || n["off_segment"]) {
            c.fail(n, "'model' gives both a buck preset and explicit segments");
        }
        ms.buck = parse_buck(c, require(c, n, "model", "buck"), "model.buck");
    } else {
        ms.on = parse_segment(c, require(c, n, "model", "on_segment"), "model.on_segment", "on");
        ms.off = parse_segment(c, require(c, n, "model", "off_segment"), "model.off_segment", "off");
        ms.C_phys = as_vector(c, require(c, n, "model", "C_phys"), "model.C_phys").transpose();
    }
    if (n["state_labels"]) {
        const YAML::Node l = n["state_labels"];
        if (!l.IsSequence()) c.fail(l, "key 'model.state_labels' expects a list of names");
        for (std::size_t i = 0; i < l.size(); ++i) ms.labels.push_back(as_string(c, l[i], "model.state_labels"));
    }
    if (n["description"]) ms.description = as_string(c, n["description"], "model.description");
    return ms;
}

PwmLogic parse_pwm(const Ctx& c, const YAML::Node& n) {
    check_keys(c, n, "pwm", {"kind", "fixed_duration"});
    const YAML::Node k = require(c, n, "pwm", "kind");
    const auto kind = parse_pwm_kind(as_string(c, k, "pwm.kind"));
    if (!kind) c.fail(k, "key 'pwm.kind' must be one of COT, COFT, FF_TRAILING, FF_LEADING");
    const YAML::Node d = require(c, n, "pwm", "fixed_duration");
    const Real fixed = as_real(c, d, "pwm.fixed_duration");
    if (!(fixed > 0.0) || !std::isfinite(fixed)) {
        c.fail(d, "key 'pwm.fixed_duration': invalid parameter: fixed_duration must be > 0");
    }
    return {*kind, fixed};
}

void parse_analysis(const Ctx& c, const YAML::Node& n, AnalysisRequests& a) {
    check_keys(c, n, "analysis", {"steady", "eigen", "bode", "sweep", "duty", "distill", "simulate", "verify"});
    auto section = [&](const char* key, std::initializer_list<const char*> allowed) -> std::optional<YAML::Node> {
        const YAML::Node s = n[key];
        if (!s) return std::nullopt;
        if (s.IsNull()) return YAML::Node(YAML::NodeType::Map);
        check_keys(c, s, join("analysis", key), allowed);
        return s;
    };
    if (section("steady", {})) a.steady = true;
    if (section("eigen", {})) a.eigen = true;
    if (auto s = section("bode", {"frequencies", "f_min", "f_max", "points"})) {
        BodeRequest b;
        if ((*s)["frequencies"]) b.f_hz = as_list(c, (*s)["frequencies"], "analysis.bode.frequencies");
        if ((*s)["f_min"]) b.f_min = as_real(c, (*s)["f_min"], "analysis.bode.f_min");
        if ((*s)["f_max"]) b.f_max = as_real(c, (*s)["f_max"], "analysis.bode.f_max");
        if ((*s)["points"]) b.points = as_count(c, (*s)["points"], "analysis.bode.points");
        for (Real f : b.f_hz) {
            if (!(f > 0.0)) c.fail((*s)["frequencies"], "analysis.bode.frequencies must be > 0");
        }
        a.bode = b;
    }
    if (auto s = section("sweep", {"variable", "values", "from", "to", "points"})) {
        SweepRequest r;
        if ((*s)["variable"]) r.variable = as_string(c, (*s)["variable"], "analysis.sweep.variable");
        static const std::vector<std::string> vars{"duty", "Se", "vc", "Vin", "R", "L_f", "C_f", "R_dcr", "R_esr"};
        if (std::find(vars.begin(), vars.end(), r.variable) == vars.end()) {
            c.fail((*s)["variable"], "key 'analysis.sweep.variable': unknown sweep variable '" + r.variable + "'");
        }
        if ((*s)["values"]) r.values = as_list(c, (*s)["values"], "analysis.sweep.values");
        if ((*s)["from"]) r.from = as_real(c, (*s)["from"], "analysis.sweep.from");
        if ((*s)["to"]) r.to = as_real(c, (*s)["to"], "analysis.sweep.to");
        if ((*s)["points"]) r.points = as_count(c, (*s)["points"], "analysis.sweep.points");
        if (r.values.empty()) {
            if (r.points == 0) c.fail(*s, "'analysis.sweep' needs 'values' or 'from', 'to' and 'points' (> 0)");
            for (std::size_t i = 0; i < r.points; ++i) {
                const Real t = r.points > 1 ? static_cast<Real>(i) / static_cast<Real>(r.points - 1) : 0.0;
                r.values.push_back(r.from + t * (r.to - r.from));
            }
        }
        a.sweep = r;
    }
    if (auto s = section("duty", {"kind", "T_s", "T_w", "f_min", "f_max", "points"})) {
        DutyRequest d;
        if ((*s)["kind"]) d.kind = as_string(c, (*s)["kind"], "analysis.duty.kind");
        if ((*s)["T_s"]) d.T_s = as_real(c, (*s)["T_s"], "analysis.duty.T_s");
        if ((*s)["T_w"]) d.T_w = as_real(c, (*s)["T_w"], "analysis.duty.T_w");
        if ((*s)["f_min"]) d.f_min = as_real(c, (*s)["f_min"], "analysis.duty.f_min");
        if ((*s)["f_max"]) d.f_max = as_real(c, (*s)["f_max"], "analysis.duty.f_max");
        if ((*s)["points"]) d.points = as_count(c, (*s)["points"], "analysis.duty.points");
        if (!d.kind.empty() && d.kind != "TRANSLATION" && d.kind != "FF_TRAILING_EDGE" && d.kind != "FF_LEADING_EDGE") {
            c.fail((*s)["kind"], "key 'analysis.duty.kind' must be TRANSLATION, FF_TRAILING_EDGE or FF_LEADING_EDGE");
        }
        a.duty = d;
    }
    if (auto s = section("distill", {"T_on", "T_off"})) {
        DistillRequest d;
        if ((*s)["T_on"]) d.T_on = as_real(c, (*s)["T_on"], "analysis.distill.T_on");
        if ((*s)["T_off"]) d.T_off = as_real(c, (*s)["T_off"], "analysis.distill.T_off");
        a.distill = d;
    }
    if (auto s = section("simulate", {"cycles", "dense", "x0", "clamp_to_clock"})) {
        SimulateRequest r;
        if ((*s)["cycles"]) r.cycles = as_count(c, (*s)["cycles"], "analysis.simulate.cycles");
        if ((*s)["dense"]) r.dense = static_cast<int>(as_count(c, (*s)["dense"], "analysis.simulate.dense"));
        if ((*s)["x0"]) r.x0 = as_list(c, (*s)["x0"], "analysis.simulate.x0");
        if ((*s)["clamp_to_clock"]) r.clamp_to_clock = as_bool(c, (*s)["clamp_to_clock"], "analysis.simulate.clamp_to_clock");
        if (r.cycles < 1) c.fail((*s)["cycles"], "key 'analysis.simulate.cycles' must be >= 1");
        a.simulate = r;
    }
    if (auto s = section("verify", {"seed", "random_designs", "injection_points"})) {
        VerifyRequest v;
        if ((*s)["seed"]) v.seed = as_count(c, (*s)["seed"], "analysis.verify.seed");
        if ((*s)["random_designs"]) v.random_designs = static_cast<int>(as_count(c, (*s)["random_designs"], "analysis.verify.random_designs"));
        if ((*s)["injection_points"]) v.injection_points = as_count(c, (*s)["injection_points"], "analysis.verify.injection_points");
        a.verify = v;
    }
}

struct ComparatorSection {
    std::optional<RowVector> K;
    std::optional<Real> R_sense;
    Real Se = 0.0;
    std::optional<Real> vc;
    std::optional<Real> duty;
    YAML::Node node;
};

ComparatorSection parse_comparator(const Ctx& c, const YAML::Node& n) {
    check_keys(c, n, "comparator", {"K", "current_sense", "Se", "vc", "duty"});
    ComparatorSection cs;
    cs.node = n;
    if (n["K"] && n["current_sense"]) c.fail(n, "'comparator' gives both 'K' and 'current_sense'");
    if (n["K"]) cs.K = as_vector(c, n["K"], "comparator.K").transpose();
    else if (n["current_sense"]) {
        const YAML::Node s = n["current_sense"];
        check_keys(c, s, "comparator.current_sense", {"R_sense"});
        cs.R_sense = as_real(c, require(c, s, "comparator.current_sense", "R_sense"), "comparator.current_sense.R_sense");
        if (!(*cs.R_sense > 0.0)) c.fail(s["R_sense"], "key 'comparator.current_sense.R_sense': invalid parameter: R_sense must be > 0");
    } else {
        c.fail(n, "missing required key 'comparator.K' (or 'comparator.current_sense')");
    }
    if (n["Se"]) {
        cs.Se = as_real(c, n["Se"], "comparator.Se");
        if (!(cs.Se >= 0.0)) c.fail(n["Se"], "key 'comparator.Se': invalid parameter: Se must be >= 0");
    }
    if (n["vc"] && n["duty"]) c.fail(n, "'comparator' gives both 'vc' and 'duty'");
    if (n["vc"]) cs.vc = as_real(c, n["vc"], "comparator.vc");
    else if (n["duty"]) {
        cs.duty = as_real(c, n["duty"], "comparator.duty");
        if (!(*cs.duty > 0.0 && *cs.duty < 1.0)) c.fail(n["duty"], "key 'comparator.duty': invalid parameter: duty must lie in (0, 1)");
    } else {
        c.fail(n, "missing required key 'comparator.vc' (or 'comparator.duty')");
    }
    return cs;
}

std::string fmt(Real v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

ConverterModel rebuild_model(const Config& cfg) {
    ConverterModel m = cfg.model;
    if (cfg.buck) {
        const ConverterModel b = build_buck(*cfg.buck, m.pwm, m.comparator);
        m.on_segment = b.on_segment;
        m.off_segment = b.off_segment;
        m.C_phys = b.C_phys;
    }
    if (cfg.R_sense) {
        const auto cmp = current_mode_comparator(m.dim(), m.pwm.kind, *cfg.R_sense, m.comparator.Se, m.comparator.vc_nominal);
        m.comparator.K = cmp.K;
    }
    if (cfg.duty) m = with_duty(std::move(m), *cfg.duty);
    return m;
}

Config parse_config_text(const std::string& text, const std::string& source_name, const ParseOptions& opt) {
    Config cfg;
    Ctx c{source_name, opt.lenient, &cfg.warnings};
    YAML::Node root;
    try {
        root = YAML::Load(text);
    } catch (const YAML::ParserException& e) {
        throw ConfigError(source_name + ":" + std::to_string(e.mark.line + 1) + ": " + e.msg);
    }
    if (!root.IsMap()) throw ConfigError(source_name + ": top level must be a mapping");
    check_keys(c, root, "", {"model", "comparator", "pwm", "analysis"});

    const ModelSection ms = parse_model(c, require(c, root, "", "model"));
    const PwmLogic pwm = parse_pwm(c, require(c, root, "", "pwm"));
    const ComparatorSection cs = parse_comparator(c, require(c, root, "", "comparator"));

    ComparatorSpec cmp;
    cmp.Se = cs.Se;
    cmp.vc_nominal = cs.vc.value_or(0.0);
    if (ms.buck) {
        cfg.model = build_buck(*ms.buck, pwm, cmp);
        cfg.buck = ms.buck;
    } else {
        cfg.model.on_segment = ms.on;
        cfg.model.off_segment = ms.off;
        cfg.model.pwm = pwm;
        cfg.model.comparator = cmp;
        cfg.model.C_phys = ms.C_phys;
    }
    if (!ms.labels.empty()) cfg.model.state_labels = ms.labels;
    if (!ms.description.empty()) cfg.model.description = ms.description;
    const Index n = cfg.model.dim();
    if (cs.K) {
        cfg.model.comparator.K = *cs.K;
    } else {
        cfg.model.comparator.K = current_mode_comparator(n, pwm.kind, *cs.R_sense, cs.Se).K;
        cfg.R_sense = cs.R_sense;
    }
    if (const auto diags = validate(cfg.model); !diags.empty()) {
        std::string msg = source_name + ": invalid parameter: " + diags.front();
        for (std::size_t i = 1; i < diags.size(); ++i) msg += "; " + diags[i];
        throw ConfigError(msg);
    }
    if (cs.duty) {
        cfg.duty = cs.duty;
        cfg.model = with_duty(std::move(cfg.model), *cs.duty);
    }
    if (root["analysis"]) parse_analysis(c, root["analysis"], cfg.analysis);
    return cfg;
}

Config parse_config(const std::filesystem::path& path, const ParseOptions& opt) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path.string() + ": cannot open file");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str(), path.string(), opt);
}

std::string serialize_config(const Config& cfg) {
    const ConverterModel& m = cfg.model;
    YAML::Emitter out;
    out.SetDoublePrecision(17);
    auto row = [&](const auto& v) {
        out << YAML::Flow << YAML::BeginSeq;
        for (Index i = 0; i < v.size(); ++i) out << YAML::Value << fmt(v(i));
        out << YAML::EndSeq;
    };
    auto matrix = [&](const Matrix& M) {
        out << YAML::BeginSeq;
        for (Index i = 0; i < M.rows(); ++i) row(RowVector(M.row(i)));
        out << YAML::EndSeq;
    };
    auto segment = [&](const PwlSegment& s) {
        out << YAML::BeginMap;
        out << YAML::Key << "A" << YAML::Value;
        matrix(s.A);
        out << YAML::Key << "B" << YAML::Value;
        matrix(s.B);
        out << YAML::Key << "U" << YAML::Value;
        row(s.U);
        out << YAML::Key << "label" << YAML::Value << s.label;
        out << YAML::EndMap;
    };

    out << YAML::BeginMap;
    out << YAML::Key << "model" << YAML::Value << YAML::BeginMap;
    if (cfg.buck) {
        const BuckParams& p = *cfg.buck;
        out << YAML::Key << "preset" << YAML::Value << "buck";
        out << YAML::Key << "buck" << YAML::Value << YAML::BeginMap;
        out << YAML::Key << "Vin" << YAML::Value << fmt(p.Vin);
        out << YAML::Key << "L_f" << YAML::Value << fmt(p.L_f);
        out << YAML::Key << "C_f" << YAML::Value << fmt(p.C_f);
        out << YAML::Key << "R" << YAML::Value << fmt(p.R);
        out << YAML::Key << "R_dcr" << YAML::Value << fmt(p.R_dcr);
        out << YAML::Key << "R_esr" << YAML::Value << fmt(p.R_esr);
        out << YAML::EndMap;
    } else {
        out << YAML::Key << "on_segment" << YAML::Value;
        segment(m.on_segment);
        out << YAML::Key << "off_segment" << YAML::Value;
        segment(m.off_segment);
        out << YAML::Key << "C_phys" << YAML::Value;
        row(m.C_phys);
    }
    if (!m.state_labels.empty()) {
        out << YAML::Key << "state_labels" << YAML::Value << YAML::Flow << m.state_labels;
    }
    out << YAML::EndMap;

    out << YAML::Key << "comparator" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "K" << YAML::Value;
    row(m.comparator.K);
    out << YAML::Key << "Se" << YAML::Value << fmt(m.comparator.Se);
    out << YAML::Key << "vc" << YAML::Value << fmt(m.comparator.vc_nominal);
    out << YAML::EndMap;

    out << YAML::Key << "pwm" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "kind" << YAML::Value << std::string(to_string(m.pwm.kind));
    out << YAML::Key << "fixed_duration" << YAML::Value << fmt(m.pwm.fixed_duration);
    out << YAML::EndMap;
    out << YAML::EndMap;
    return std::string(out.c_str()) + "\n";
}

}  // namespace pwmsd::cli
