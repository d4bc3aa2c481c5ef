#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tmnre/config.hpp"
#include "tmnre/errors.hpp"
#include "tmnre/run.hpp"

namespace {

struct Flags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> workers;
    std::string out;
};

void add_common(CLI::App* cmd, Flags& f, bool config_required) {
    auto* opt = cmd->add_option("--config", f.config, "config file (JSON)");
    if (config_required) opt->required();
    cmd->add_option("--seed", f.seed, "overrides the config seed");
    cmd->add_option("--workers", f.workers, "worker threads")->check(CLI::PositiveNumber);
    cmd->add_option("--out", f.out, "run directory");
}

tmnre::RunConfig resolve(const Flags& f) {
    auto parsed = tmnre::load_config(f.config);
    for (const auto& d : parsed.defaults) std::cerr << "default: " << d << '\n';
    auto& c = parsed.config;
    if (f.seed) c.seed = *f.seed;
    if (f.workers) c.workers = *f.workers;
    if (!f.out.empty()) c.output = f.out;
    return c;
}

std::filesystem::path run_dir(const Flags& f) {
    if (!f.out.empty()) return f.out;
    if (!f.config.empty()) return tmnre::load_config(f.config).config.output;
    throw tmnre::ConfigError({"--out or --config is required"});
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Truncated marginal neural ratio estimation"};
    app.require_subcommand(1);

    Flags run_flags;
    auto* run = app.add_subcommand("run", "run TMNRE or MNRE and export posteriors");
    add_common(run, run_flags, true);

    Flags diag_flags;
    std::string reference;
    auto* diagnose = app.add_subcommand("diagnose", "C2ST, KL, coverage and boundary checks for a finished run");
    add_common(diagnose, diag_flags, false);
    diagnose->add_option("--reference", reference, "reference samples CSV to use instead of the oracle");

    Flags sweep_flags;
    std::vector<double> epsilons;
    std::optional<std::size_t> repetitions;
    auto* sweep = app.add_subcommand("sweep-epsilon", "TMNRE over a list of epsilon values, scored by C2ST-ddm");
    add_common(sweep, sweep_flags, true);
    sweep->add_option("--epsilons", epsilons, "epsilon values (defaults to sweep.epsilons)")->delimiter(',');
    sweep->add_option("--repetitions", repetitions, "repetitions per epsilon")->check(CLI::PositiveNumber);

    Flags export_flags;
    auto* exp = app.add_subcommand("export", "re-emit posterior CSVs from a finished run");
    add_common(exp, export_flags, false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : tmnre::exit_config_error;
    }

    try {
        if (*run) {
            const auto config = resolve(run_flags);
            return tmnre::cmd_run(config, std::cerr).exit_code;
        }
        if (*diagnose) {
            tmnre::DiagnoseOptions options;
            if (diag_flags.workers) options.workers = *diag_flags.workers;
            if (!reference.empty()) options.reference_csv = reference;
            const auto report = tmnre::cmd_diagnose(run_dir(diag_flags), options, std::cerr);
            std::cout << report.dump(2) << '\n';
            return tmnre::exit_success;
        }
        if (*sweep) {
            auto config = resolve(sweep_flags);
            if (repetitions) config.sweep.repetitions = *repetitions;
            if (epsilons.empty()) epsilons = config.sweep.epsilons;
            if (epsilons.empty()) throw tmnre::ConfigError({"sweep needs at least one epsilon"});
            tmnre::RunLock lock(config.output);
            const auto rows = tmnre::cmd_sweep_epsilon(config, epsilons, std::cerr);
            std::cout << (config.output / "sweep.csv").string() << '\n';
            return rows.empty() ? tmnre::exit_runtime_failure : tmnre::exit_success;
        }
        const auto dir = run_dir(export_flags);
        tmnre::RunLock lock(dir);
        std::cout << tmnre::cmd_export(dir, std::cerr).dump(2) << '\n';
        return tmnre::exit_success;
    } catch (const tmnre::ConfigError& e) {
        std::cerr << e.what() << '\n';
        return tmnre::exit_config_error;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return tmnre::exit_runtime_failure;
    }
}
