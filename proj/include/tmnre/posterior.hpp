#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <vector>

#include <json.hpp>

#include "tmnre/prior.hpp"
#include "tmnre/random.hpp"
#include "tmnre/ratio.hpp"

namespace tmnre {

/// Posterior values on a tensor grid over the region's index dimensions.
/// Grid points include both interval ends; 2-d values are row-major with
/// the first index dimension varying slowest.
struct GridPosterior {
    MarginalIndex index;
    std::vector<Vector> axes;
    Vector log_unnormalized;  // log r + log p_Gamma
    Vector density;           // normalized by trapezoidal quadrature
    double log_normalizer = 0.0;

    std::size_t dims() const { return axes.size(); }
    std::size_t points() const { return static_cast<std::size_t>(density.size()); }
    Vector unnormalized() const { return log_unnormalized.array().exp().matrix(); }
    /// Trapezoid quadrature weight of each grid point (sum = region area).
    Vector weights() const;
    /// Density at an arbitrary point by (bi)linear interpolation; 0 outside.
    double interpolate(std::span<const double> params) const;
};

/// Marginal prior density p_Gamma over `index` restricted to `region`.
Vector log_truncated_marginal(const FactorizablePrior& prior, const TruncationRegion& region, const MarginalIndex& index,
                              const Matrix& params);

/// w = exp(log r) p_Gamma on G (1-d) or G x G (2-d) points over the region.
/// Throws RuntimeFailure("degenerate posterior") when every w is zero.
GridPosterior grid_posterior(const LogRatioModel& est, std::span<const double> x_o, const FactorizablePrior& prior,
                             const TruncationRegion& region, std::size_t grid);

struct WeightedHistogram {
    MarginalIndex index;
    std::vector<Vector> edges;  // bins + 1 per dimension
    Vector weights;             // row-major for 2-d, sums to 1
    std::size_t sample_count = 0;

    std::size_t bins(std::size_t d) const { return static_cast<std::size_t>(edges[d].size()) - 1; }
    void write_csv(std::ostream& out) const;
};

/// Each prior sample (columns follow the index) inside the region adds
/// weight exp(log r) to its bin.
WeightedHistogram weighted_histogram(const LogRatioModel& est, std::span<const double> x_o, const Matrix& prior_samples,
                                     const TruncationRegion& region, std::size_t bins = 100);

/// Equal-weight histogram of samples (columns follow `index`) over `region`.
WeightedHistogram sample_histogram(const MarginalIndex& index, const Matrix& samples, const TruncationRegion& region,
                                   std::size_t bins = 100);

struct PosteriorSamples {
    MarginalIndex index;
    Matrix samples;  // columns follow the index
    double acceptance_rate = 0.0;
    double log_bound = 0.0;  // log M
    std::size_t proposals = 0;
    std::size_t clipped = 0;  // proposals whose ratio exceeded M

    nlohmann::json metadata() const;
    void write_csv(std::ostream& out) const;
};

struct RejectionOptions {
    std::size_t grid = 0;  // 0: 1000 points for 1-d, 100 per axis for 2-d
    double safety = 1.05;
    std::size_t abort_after = 10'000'000;
    double min_acceptance = 1e-5;
    std::size_t batch = 4096;
};

/// Proposals from the truncated prior, accepted with probability r / M
/// where M is the grid maximum of r times the safety factor.
PosteriorSamples rejection_sample(const LogRatioModel& est, std::span<const double> x_o, const FactorizablePrior& prior,
                                  const TruncationRegion& region, std::size_t n, Rng& rng, const RejectionOptions& options = {});

struct HpdSet {
    std::vector<bool> mask;
    double threshold = 0.0;  // density level of the super-level set
    double mass = 0.0;
    std::vector<Interval> intervals;  // 1-d only: covered runs, half a cell padded and clipped

    /// Whether `params` lies in the super-level set (interpolated density >= threshold).
    bool contains(const GridPosterior& posterior, std::span<const double> params) const;
};

/// Smallest super-level set of grid cells with mass >= credibility.
HpdSet hpd_interval(const GridPosterior& posterior, double credibility);

}  // namespace tmnre
