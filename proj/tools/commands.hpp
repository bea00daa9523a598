#pragma once

#include "config.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace pwmsd::cli {

inline constexpr int exit_ok = 0;
inline constexpr int exit_config = 2;
inline constexpr int exit_solver = 3;
inline constexpr int exit_verify = 4;

inline constexpr std::string_view command_names[] = {"steady", "eigen",    "bode",     "sweep",
                                                     "duty",   "distill",  "simulate", "verify"};

struct RunOptions {
    std::optional<std::filesystem::path> out_dir;  // write <command>.csv / .txt here instead of stdout
    bool verify = false;                           // bode, duty: add oracle columns and enforce tolerances
    std::optional<Real> tol;                       // relative magnitude tolerance; phase tolerance is 100 * tol degrees
    std::optional<std::uint64_t> seed;             // overrides analysis.verify.seed
};

struct CommandOutput {
    std::string file_name;  // "bode.csv", "steady.txt", ...
    std::string text;
    bool passed = true;     // false when a --verify comparison or the verify suite failed
};

/// "%.17g" with a "." separator regardless of locale.
[[nodiscard]] std::string format_real(Real v);

[[nodiscard]] CommandOutput run_steady(const Config& cfg, const RunOptions& opt);
[[nodiscard]] CommandOutput run_eigen(const Config& cfg, const RunOptions& opt);
[[nodiscard]] CommandOutput run_bode(const Config& cfg, const RunOptions& opt);
[[nodiscard]] CommandOutput run_sweep(const Config& cfg, const RunOptions& opt);
[[nodiscard]] CommandOutput run_duty(const Config& cfg, const RunOptions& opt);
[[nodiscard]] CommandOutput run_distill(const Config& cfg, const RunOptions& opt);
[[nodiscard]] CommandOutput run_simulate(const Config& cfg, const RunOptions& opt);
[[nodiscard]] CommandOutput run_verify(const Config& cfg, const RunOptions& opt);

/// Throws ConfigError for an unknown command name.
[[nodiscard]] CommandOutput run_command(std::string_view command, const Config& cfg, const RunOptions& opt);

/// Runs one command end to end: output goes to `out` (or the --out directory),
/// diagnostics to `err`. Returns the process exit code.
int execute(std::string_view command, const std::filesystem::path& config_path, bool lenient, const RunOptions& opt,
            std::ostream& out, std::ostream& err);

}  // namespace pwmsd::cli
