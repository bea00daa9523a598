#include "commands.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
    using namespace pwmsd::cli;

    CLI::App app{"Sampled-data small-signal analysis of PWM DC-DC converters"};
    app.set_version_flag("--version", "pwmsd 0.1.0");

    std::string command;
    std::string config;
    std::string out_dir;
    bool verify = false;
    bool lenient = false;
    double tol = 0.0;
    std::uint64_t seed = 0;

    std::vector<std::string> names(std::begin(command_names), std::end(command_names));
    app.add_option("command", command, "steady | eigen | bode | sweep | duty | distill | simulate | verify")
        ->required()
        ->check(CLI::IsMember(names));
    app.add_option("--config", config, "configuration file")->required();
    auto* out_opt = app.add_option("--out", out_dir, "directory for output files (default: stdout)");
    app.add_flag("--verify", verify, "bode, duty: add oracle columns and fail on tolerance breaches");
    app.add_flag("--lenient", lenient, "report unknown configuration keys as warnings");
    auto* tol_opt = app.add_option("--tol", tol, "relative magnitude tolerance for --verify (phase: 100 * tol degrees)")
                        ->check(CLI::PositiveNumber);
    auto* seed_opt = app.add_option("--seed", seed, "seed for the randomized checks of 'verify'");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? exit_ok : exit_config;
    }

    RunOptions opt;
    if (*out_opt) opt.out_dir = out_dir;
    opt.verify = verify;
    if (*tol_opt) opt.tol = tol;
    if (*seed_opt) opt.seed = seed;
    return execute(command, config, lenient, opt, std::cout, std::cerr);
}
