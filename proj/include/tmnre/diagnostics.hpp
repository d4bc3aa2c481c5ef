#pragma once

#include <cstddef>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tmnre/posterior.hpp"
#include "tmnre/prior.hpp"
#include "tmnre/random.hpp"
#include "tmnre/ratio.hpp"
#include "tmnre/simulator.hpp"

namespace tmnre {

struct C2stOptions {
    std::size_t folds = 5;
    std::size_t hidden_factor = 10;  // width per input dimension
    double learning_rate = 1e-3;
    std::size_t batch_size = 200;
    std::size_t max_epochs = 1000;
    std::size_t patience = 10;  // epochs without train-loss improvement > tol
    double tolerance = 1e-4;
    std::size_t min_samples = 50;
    /// Per-side cap; larger sets are subsampled. 0 keeps everything.
    std::size_t max_samples = 0;

    nlohmann::json to_json() const;
};

/// Mean held-out accuracy of a two-hidden-layer ReLU classifier separating
/// the two sets, by k-fold cross-validation on a balanced, standardized pool.
double c2st(const Matrix& samples_p, const Matrix& samples_q, Rng& rng, const C2stOptions& options = {});

struct C2stEntry {
    MarginalIndex index;
    double accuracy = 0.0;
};

struct C2stReport {
    std::size_t d = 1;
    std::vector<C2stEntry> entries;
    std::vector<MarginalIndex> missing;
    double mean = 0.0;  // over the entries present

    bool complete() const { return missing.empty(); }
    nlohmann::json to_json() const;
};

/// Average c2st over all d-dimensional index sets; the reference is
/// marginalized by column selection.
C2stReport c2st_ddm(const Matrix& reference_joint, const std::map<MarginalIndex, Matrix>& approx, std::size_t d, Rng& rng,
                    const C2stOptions& options = {});

struct KlOptions {
    std::size_t bins = 100;
    double pseudo_count = 1.0;  // added to every bin of both histograms
};

/// D_KL(P || Q) between 1-d histograms over the union of both ranges.
double kl_histogram(std::span<const double> samples_p, std::span<const double> samples_q, const KlOptions& options = {});

struct CoverageCurve {
    MarginalIndex index;
    std::vector<double> levels;
    std::vector<double> empirical;
    std::vector<double> stderr_;
    std::size_t draws = 0;

    void write_csv(std::ostream& out) const;
    nlohmann::json to_json() const;
};

struct CoverageOptions {
    std::size_t grid = 256;
    std::size_t workers = 1;
};

/// Nominal credibility levels 0.1, 0.2, ..., 0.9.
std::vector<double> default_levels();

/// For each of N draws theta ~ p_Gamma, x ~ p(x | theta): whether theta_d
/// falls inside the HPD set of each 1-d head at each level.
std::vector<CoverageCurve> coverage_test(std::span<const LogRatioModel* const> heads_1d, const Simulator& sim,
                                         const FactorizablePrior& prior, const TruncationRegion& region, std::size_t draws,
                                         std::span<const double> levels, Rng& rng, const CoverageOptions& options = {});

struct BoundaryReport {
    bool passed = true;
    double level = 0.95;
    std::vector<std::size_t> offending_dims;

    nlohmann::json to_json() const;
};

/// Fails when any cell of the level-t HPD set lies on the first or last
/// grid point along a dimension. Edges that coincide with `support` (when
/// given) are not counted since the posterior may legitimately end there.
BoundaryReport boundary_check(const GridPosterior& posterior, double level = 0.95, const TruncationRegion* support = nullptr);

}  // namespace tmnre
