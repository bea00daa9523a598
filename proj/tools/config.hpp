#pragma once

#include "pwmsd/converter.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace pwmsd::cli {

/// Raised for anything wrong with the configuration file; maps to exit code 2.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct BodeRequest {
    std::vector<Real> f_hz;  // explicit grid, or filled from f_min/f_max/points
    Real f_min = 0.0;
    Real f_max = 0.0;
    std::size_t points = 15;
};

struct SweepRequest {
    std::string variable = "duty";  // duty | Se | vc | Vin | R | L_f | C_f | R_dcr | R_esr
    std::vector<Real> values;
    Real from = 0.0;
    Real to = 0.0;
    std::size_t points = 0;
};

struct DutyRequest {
    std::string kind;  // TRANSLATION | FF_TRAILING_EDGE | FF_LEADING_EDGE; empty = follow pwm.kind
    std::optional<Real> T_s;
    std::optional<Real> T_w;
    Real f_min = 0.0;
    Real f_max = 0.0;
    std::size_t points = 20;
};

struct DistillRequest {
    std::optional<Real> T_on;
    std::optional<Real> T_off;
};

struct SimulateRequest {
    std::size_t cycles = 200;
    int dense = 0;
    std::optional<std::vector<Real>> x0;  // default: the periodic operating point
    bool clamp_to_clock = true;
};

struct VerifyRequest {
    std::uint64_t seed = 1;
    int random_designs = 5;
    std::size_t injection_points = 15;
};

struct AnalysisRequests {
    bool steady = false;
    bool eigen = false;
    std::optional<BodeRequest> bode;
    std::optional<SweepRequest> sweep;
    std::optional<DutyRequest> duty;
    std::optional<DistillRequest> distill;
    std::optional<SimulateRequest> simulate;
    std::optional<VerifyRequest> verify;
};

struct Config {
    ConverterModel model;
    std::optional<BuckParams> buck;  // set when the model came from the buck preset
    std::optional<Real> duty;        // set when vc was derived from a duty target
    std::optional<Real> R_sense;     // set when K came from the current-sense shorthand
    AnalysisRequests analysis;
    std::vector<std::string> warnings;
};

struct ParseOptions {
    bool lenient = false;  // unknown keys become warnings instead of errors
};

[[nodiscard]] Config parse_config_text(const std::string& text, const std::string& source_name,
                                       const ParseOptions& opt = {});
[[nodiscard]] Config parse_config(const std::filesystem::path& path, const ParseOptions& opt = {});

/// Rebuilds the model from a parsed config's model-level fields (used by sweeps).
[[nodiscard]] ConverterModel rebuild_model(const Config& cfg);

/// YAML text that parses back to the same model; numbers use 17 significant digits.
[[nodiscard]] std::string serialize_config(const Config& cfg);

}  // namespace pwmsd::cli
