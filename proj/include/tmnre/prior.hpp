#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "tmnre/random.hpp"

namespace tmnre {

struct Interval {
    double lo = 0.0;
    double hi = 1.0;

    double width() const { return hi - lo; }
    double center() const { return 0.5 * (lo + hi); }
    bool contains(double v) const { return v >= lo && v <= hi; }
    bool contains(const Interval& other) const { return other.lo >= lo && other.hi <= hi; }

    friend bool operator==(const Interval&, const Interval&) = default;
};

/// One-dimensional prior factor. Normal factors are compactified to
/// mean +/- 8 std and renormalized over that support.
class PriorComponent {
public:
    enum class Kind { uniform, normal };

    static PriorComponent uniform(double lo, double hi);
    static PriorComponent normal(double mean, double stddev);

    Kind kind() const { return kind_; }
    const Interval& support() const { return support_; }
    double param(std::size_t i) const { return i == 0 ? a_ : b_; }

    double log_pdf(double v) const;
    double pdf(double v) const;
    /// CDF renormalized to the support, F(lo) = 0 and F(hi) = 1.
    double cdf(double v) const;
    /// Probability mass of `interval` (clipped to the support).
    double mass(const Interval& interval) const;
    /// Draw restricted to `interval` by inverse CDF.
    double sample(const Interval& interval, Rng& rng) const;

    static constexpr double kNormalSupportSigmas = 8.0;

private:
    PriorComponent(Kind kind, double a, double b, Interval support);

    // Upper tail mass above v (unnormalized normal), used for precision
    // when the interval sits in the right half.
    double upper_tail(double v) const;

    Kind kind_;
    double a_;
    double b_;
    Interval support_;
    double norm_ = 1.0;  // mass of the unrestricted distribution on the support
};

/// Axis-aligned box inside the prior support. Construction clips to the
/// support; the result must be non-degenerate in every dimension.
class TruncationRegion {
public:
    TruncationRegion() = default;
    explicit TruncationRegion(std::vector<Interval> intervals);
    TruncationRegion(std::vector<Interval> intervals, const TruncationRegion& support);

    std::size_t dims() const { return intervals_.size(); }
    const Interval& operator[](std::size_t d) const { return intervals_[d]; }
    const std::vector<Interval>& intervals() const { return intervals_; }

    bool contains(std::span<const double> theta) const;
    bool contains(const TruncationRegion& other) const;
    double volume() const;
    /// Sub-box over the listed dimensions, in the order given.
    TruncationRegion select(std::span<const std::size_t> dims) const;

    friend bool operator==(const TruncationRegion&, const TruncationRegion&) = default;

private:
    std::vector<Interval> intervals_;
};

class FactorizablePrior {
public:
    FactorizablePrior() = default;
    explicit FactorizablePrior(std::vector<PriorComponent> components);

    static FactorizablePrior unit_cube(std::size_t dims);

    std::size_t dims() const { return components_.size(); }
    const PriorComponent& component(std::size_t d) const { return components_[d]; }
    const std::vector<PriorComponent>& components() const { return components_; }
    /// The support box Omega.
    const TruncationRegion& support() const { return support_; }

    double log_pdf(std::span<const double> theta) const;
    /// Prior mass contained in `region`.
    double mass(const TruncationRegion& region) const;
    FactorizablePrior marginal(std::span<const std::size_t> dims) const;

private:
    std::vector<PriorComponent> components_;
    TruncationRegion support_;
};

/// p_Gamma(theta) = 1_Gamma(theta) p(theta) / V.
class TruncatedPrior {
public:
    TruncatedPrior(FactorizablePrior base, TruncationRegion region);

    const FactorizablePrior& base() const { return base_; }
    const TruncationRegion& region() const { return region_; }
    double log_norm() const { return log_norm_; }

    double log_density(std::span<const double> theta) const;
    Matrix sample(std::size_t n, Rng& rng) const;

private:
    FactorizablePrior base_;
    TruncationRegion region_;
    double log_norm_;
};

/// n draws from the prior truncated to `region`, one per row.
/// Throws RuntimeFailure("empty truncation") when some dimension of the
/// region carries no prior mass.
Matrix sample_truncated(const FactorizablePrior& prior, const TruncationRegion& region, std::size_t n, Rng& rng);

/// Exact prior mass ratio mass(inner) / mass(outer) via per-dimension CDFs.
double mass_ratio(const FactorizablePrior& prior, const TruncationRegion& inner, const TruncationRegion& outer);

double log_density(const TruncatedPrior& prior, std::span<const double> theta);

}  // namespace tmnre
