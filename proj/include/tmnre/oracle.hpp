#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tmnre/prior.hpp"
#include "tmnre/random.hpp"
#include "tmnre/ratio.hpp"
#include "tmnre/simulator.hpp"

namespace tmnre {

struct ReferencePosterior {
    std::string simulator;
    Vector x_o;
    Matrix samples;  // n x D joint samples
    std::string method;  // "likelihood-rejection" | "grid" | "analytic"
    double acceptance_rate = 0.0;
    std::size_t proposals = 0;

    /// Columns of the index, i.e. the marginal over the other dimensions.
    Matrix marginal(const MarginalIndex& index) const { return index.select(samples); }

    void save_csv(const std::filesystem::path& path) const;
    static ReferencePosterior load_csv(const std::filesystem::path& path);
};

struct LikelihoodRejectionOptions {
    std::size_t pilot = 100'000;
    double safety = 1.05;
    std::size_t batch = 8192;
    /// Abort once this many proposals have been made with an acceptance
    /// rate below min_acceptance.
    std::size_t patience = 20'000'000;
    double min_acceptance = 1e-7;
    std::size_t workers = 1;
};

/// theta ~ p(theta), accepted with probability L(x_o | theta) / (1.05 L_max).
/// L_max is the best of a pilot draw of the prior, polished by a local
/// coordinate search.
ReferencePosterior likelihood_rejection(const Simulator& sim, const FactorizablePrior& prior, std::span<const double> x_o,
                                        std::size_t n, Rng& rng, const LikelihoodRejectionOptions& options = {});

/// N(mu, sigma^2) restricted to [lo, hi].
class TruncatedNormal {
public:
    TruncatedNormal(double mu, double sigma, double lo, double hi);

    double mu() const { return mu_; }
    double sigma() const { return sigma_; }
    double lo() const { return lo_; }
    double hi() const { return hi_; }

    double pdf(double v) const;
    double log_pdf(double v) const;
    double cdf(double v) const;
    double mode() const { return std::clamp(mu_, lo_, hi_); }
    double mean() const;
    double variance() const;
    double stddev() const { return std::sqrt(variance()); }
    double sample(Rng& rng) const;

private:
    double mu_;
    double sigma_;
    double lo_;
    double hi_;
    double alpha_;
    double beta_;
    double z_;  // Phi(beta) - Phi(alpha)
};

/// Per-dimension posteriors of the Gaussian calibration simulator under
/// its uniform prior: N(x_o[d], sigma^2) truncated to the prior interval.
std::vector<TruncatedNormal> analytic_posterior(const GaussianDiagSimulator& sim, std::span<const double> x_o,
                                                const FactorizablePrior& prior);

/// Samples from the analytic posterior (n x D).
ReferencePosterior analytic_reference(const GaussianDiagSimulator& sim, std::span<const double> x_o,
                                      const FactorizablePrior& prior, std::size_t n, Rng& rng);

/// Log ratio head built from the analytic posterior: log p(theta | x) - log p_Gamma(theta)
/// for the posterior at whatever x is passed in. Calibrated by construction.
FunctionRatioModel analytic_ratio_head(const GaussianDiagSimulator& sim, const FactorizablePrior& prior,
                                       const TruncationRegion& region, std::size_t dim);

/// Eggbox posterior by likelihood rejection. The likelihood and the unit
/// cube prior factorize over dimensions, so each coordinate is sampled by
/// an exact 1-d rejection step with bound max_s exp(-(x - s)^2 / 2 sigma^2).
ReferencePosterior eggbox_reference(const EggboxSimulator& sim, std::span<const double> x_o, std::size_t n, Rng& rng);

}  // namespace tmnre
