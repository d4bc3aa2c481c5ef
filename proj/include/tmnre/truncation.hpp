#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tmnre/neural.hpp"
#include "tmnre/prior.hpp"
#include "tmnre/ratio.hpp"
#include "tmnre/simulator.hpp"
#include "tmnre/store.hpp"

namespace tmnre {

struct TmnreConfig {
    double epsilon = 2.2603294069810542e-06;  // e^-13
    double beta = 0.8;
    std::size_t max_rounds = 10;
    std::size_t budget = 0;  // B
    double round_fraction = 0.3;
    /// Per-round training-set target N^(m) (retained + new). Overrides
    /// round_fraction * B; the last entry repeats for later rounds.
    std::vector<std::size_t> schedule;
    /// When positive, N^(m) = retained + increment (budget 0 = unlimited).
    std::size_t increment = 0;
    std::size_t grid = 1000;
    MarginalSet final_marginals = MarginalSet::both;
    /// Simulate the remaining budget in the final region and train the
    /// final marginals there.
    bool final_phase = true;
    /// Also train the final marginals in every constraining round.
    bool train_all_each_round = false;

    std::size_t round_target(std::size_t round, std::size_t retained = 0) const;
    /// Every violated constraint, empty when valid.
    std::vector<std::string> validate() const;
    nlohmann::json to_json() const;
    static TmnreConfig from_json(const nlohmann::json& j);
};

struct ShrinkResult {
    TruncationRegion region;
    std::vector<std::size_t> degenerate_dims;  // kept at their old interval
};

/// Per dimension: w(theta) = exp(log r_d(x_o | theta)) p(theta_d) on a
/// uniform grid over the current interval; the new interval is the hull of
/// grid points with w > epsilon * max w, padded by one grid cell and
/// intersected with the old interval. heads[d] must have index {d}; a
/// null head keeps its interval and is reported as degenerate.
ShrinkResult shrink_region(std::span<const LogRatioModel* const> heads, const FactorizablePrior& prior,
                           const TruncationRegion& region, std::span<const double> x_o, double epsilon, std::size_t grid);

struct HeadSummary {
    std::string label;
    bool ok = false;
    std::string error;
    std::size_t epochs = 0;
    std::size_t best_epoch = 0;
    double best_val_loss = 0.0;
    std::uint64_t data_hash = 0;
};

struct RoundRecord {
    std::size_t round = 0;
    TruncationRegion region_in;
    TruncationRegion region_out;
    double alpha = 1.0;
    double prior_mass = 1.0;  // mass of region_out under the prior
    std::size_t target = 0;
    std::size_t retained = 0;
    std::size_t requested = 0;
    std::size_t simulated = 0;
    std::size_t training_rows = 0;
    std::size_t cumulative_simulations = 0;
    std::vector<std::size_t> degenerate_dims;
    std::vector<HeadSummary> heads;

    nlohmann::json to_json() const;
    static RoundRecord from_json(const nlohmann::json& j);
};

enum class RunStatus {
    converged,         // alpha > beta
    max_rounds,        // m = M without alpha > beta
    budget_exhausted,  // nothing left to simulate for the next round
    single_round,      // MNRE, no truncation
};

std::string to_string(RunStatus status);
RunStatus parse_run_status(const std::string& s);

struct FinalPhase {
    std::size_t round = 0;  // store tag used for the final simulations
    TruncationRegion region;
    std::size_t simulated = 0;
    std::size_t training_rows = 0;
    std::vector<HeadSummary> heads;

    nlohmann::json to_json() const;
};

struct TmnreResult {
    RunStatus status = RunStatus::converged;
    std::vector<RoundRecord> rounds;
    std::optional<FinalPhase> final_phase;
    TruncationRegion final_region;
    SampleStore store;
    /// Heads of each constraining round, in round order.
    std::vector<MnreResult> round_heads;
    /// Final estimators: final-phase heads, or the last round's heads.
    MnreResult final_heads;
    std::size_t total_simulations = 0;

    nlohmann::json history_json() const;
};

struct TmnreCallbacks {
    /// After every completed constraining round (store includes its data).
    std::function<void(const RoundRecord&, const SampleStore&, const MnreResult&)> on_round;
    std::function<void(const FinalPhase&, const SampleStore&, const MnreResult&)> on_final;
};

/// Completed rounds to continue from; their data is reused as is.
struct ResumeState {
    SampleStore store;
    std::vector<RoundRecord> rounds;
};

/// Algorithm driver. All randomness derives from `seed`: round m uses
/// streams derive_seed(seed, {m, ...}), so a resumed run matches an
/// uninterrupted one.
TmnreResult run_tmnre(const Simulator& sim, const FactorizablePrior& prior, std::span<const double> x_o,
                      const TmnreConfig& config, const TrainConfig& train, std::uint64_t seed, std::size_t workers = 1,
                      const TmnreCallbacks& callbacks = {}, const ResumeState* resume = nullptr);

/// Single round on the full prior with Poisson(B) simulations; the
/// region never shrinks.
TmnreResult run_mnre(const Simulator& sim, const FactorizablePrior& prior, std::span<const double> x_o, std::size_t budget,
                     MarginalSet marginals, const TrainConfig& train, std::uint64_t seed, std::size_t workers = 1,
                     const TmnreCallbacks& callbacks = {});

/// Probability mass of `density` on [lo, hi] where density < epsilon * max.
/// The maximum comes from a dense scan; the sub-level set boundaries are
/// refined by bisection and each piece integrated by adaptive quadrature.
double removed_mass_bound(const std::function<double(double)>& density, const Interval& support, double epsilon,
                          std::size_t scan_points = 200001);

}  // namespace tmnre
