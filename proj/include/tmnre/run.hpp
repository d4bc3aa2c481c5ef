#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tmnre/config.hpp"
#include "tmnre/oracle.hpp"
#include "tmnre/truncation.hpp"

namespace tmnre {

enum ExitCode : int {
    exit_success = 0,
    exit_config_error = 2,
    exit_not_converged = 3,
    exit_runtime_failure = 4,
};

int exit_code_for(RunStatus status);

struct RunPaths {
    std::filesystem::path root;

    std::filesystem::path lock() const { return root / "run.lock"; }
    std::filesystem::path config() const { return root / "config.json"; }
    std::filesystem::path store() const { return root / "store" / "samples.bin"; }
    std::filesystem::path estimators() const { return root / "estimators"; }
    std::filesystem::path rounds() const { return root / "rounds.json"; }
    std::filesystem::path exports() const { return root / "exports"; }
    std::filesystem::path diagnostics() const { return root / "diagnostics"; }
};

/// Exclusive ownership of a run directory for the lifetime of the object.
class RunLock {
public:
    explicit RunLock(const std::filesystem::path& dir);
    ~RunLock();
    RunLock(const RunLock&) = delete;
    RunLock& operator=(const RunLock&) = delete;

private:
    std::filesystem::path path_;
};

struct RunOutcome {
    TmnreResult result;
    int exit_code = exit_success;
    bool resumed = false;
    std::size_t reused_rounds = 0;
};

/// Runs the configured algorithm into config.output. A directory holding
/// an earlier, interrupted run of the same config is resumed from its
/// completed rounds.
RunOutcome cmd_run(const RunConfig& config, std::ostream& log);

/// Final estimators of a finished run, as recorded in rounds.json.
struct LoadedRun {
    RunConfig config;
    nlohmann::json history;
    TruncationRegion final_region;
    std::vector<MarginalRatioEstimator> estimators;
    std::vector<std::string> failed_heads;
};

LoadedRun load_run(const std::filesystem::path& dir);

/// Re-emits the posterior CSVs of a finished run. Returns the export summary.
nlohmann::json cmd_export(const std::filesystem::path& dir, std::ostream& log);

/// Reference posterior for the configured problem, or nullopt when the
/// simulator has no oracle.
std::optional<ReferencePosterior> make_reference(const Problem& problem, std::size_t n, Rng& rng, std::size_t workers);

struct DiagnoseOptions {
    std::size_t workers = 1;
    std::optional<std::filesystem::path> reference_csv;  // reuse a stored reference
};

/// Writes C2ST-ddm, per-dimension KL, coverage and boundary reports under
/// diagnostics/ and returns the combined report.
nlohmann::json cmd_diagnose(const std::filesystem::path& dir, const DiagnoseOptions& options, std::ostream& log);

struct SweepRow {
    double epsilon = 0.0;
    std::size_t repetition = 0;
    std::string status;
    double c2st_ddm = 0.0;
    double c2st_1d = 0.0;
    double c2st_2d = 0.0;
    std::size_t total_simulations = 0;
    double c2st_ddm_per_simulation = 0.0;
    std::string error;
};

/// One TMNRE run per (epsilon, repetition), scored against the oracle.
/// Writes sweep.csv under config.output and returns the rows.
std::vector<SweepRow> cmd_sweep_epsilon(const RunConfig& config, const std::vector<double>& epsilons, std::ostream& log);

}  // namespace tmnre
