#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tmnre/diagnostics.hpp"
#include "tmnre/errors.hpp"
#include "tmnre/neural.hpp"
#include "tmnre/prior.hpp"
#include "tmnre/simulator.hpp"
#include "tmnre/truncation.hpp"

namespace tmnre {

/// Every problem found while reading a config, in file order.
class ConfigError : public PreconditionError {
public:
    explicit ConfigError(std::vector<std::string> errors);
    const std::vector<std::string>& errors() const { return errors_; }

private:
    std::vector<std::string> errors_;
};

struct ExportConfig {
    std::size_t bins = 100;
    std::size_t samples = 10'000;  // rejection samples per marginal
};

struct DiagnoseConfig {
    std::size_t coverage_draws = 10'000;
    std::size_t coverage_grid = 256;
    std::size_t reference_samples = 10'000;
    std::size_t approx_samples = 10'000;
    double boundary_level = 0.95;
    std::size_t kl_bins = 100;
    C2stOptions c2st;
};

struct SweepConfig {
    std::vector<double> epsilons;
    std::size_t repetitions = 1;
};

struct RunConfig {
    std::string simulator = "torus";
    nlohmann::json simulator_params = nlohmann::json::object();
    std::optional<nlohmann::json> prior;  // simulator default when unset
    std::optional<std::vector<double>> x_o;
    std::optional<std::vector<double>> theta_o;  // x_o = noiseless(theta_o)
    std::string algorithm = "tmnre";
    TmnreConfig tmnre;
    TrainConfig train;
    std::uint64_t seed = 0;
    std::size_t workers = 1;
    std::filesystem::path output = "runs/default";
    ExportConfig exports;
    DiagnoseConfig diagnose;
    SweepConfig sweep;

    nlohmann::json to_json() const;
};

struct ParsedConfig {
    RunConfig config;
    /// "key = value" for every key that fell back to its default.
    std::vector<std::string> defaults;
};

/// Throws ConfigError listing every unknown key, type mismatch and
/// violated constraint.
ParsedConfig parse_config(const nlohmann::json& j);
ParsedConfig load_config(const std::filesystem::path& path);

std::vector<std::string> validate(const TrainConfig& train);

/// Simulator, prior and observation resolved from a config.
struct Problem {
    std::unique_ptr<Simulator> simulator;
    FactorizablePrior prior;
    Vector x_o;
    std::optional<Vector> theta_o;
};

Problem resolve_problem(const RunConfig& config);

}  // namespace tmnre
