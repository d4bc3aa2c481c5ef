#include "tmnre/prior.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <boost/math/special_functions/erf.hpp>

#include "tmnre/errors.hpp"

namespace tmnre {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double lower_tail(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }
double upper_tail_std(double z) { return 0.5 * std::erfc(z / std::numbers::sqrt2); }

Interval clip(const Interval& interval, const Interval& bounds) {
    return {std::max(interval.lo, bounds.lo), std::min(interval.hi, bounds.hi)};
}

}  // namespace

PriorComponent::PriorComponent(Kind kind, double a, double b, Interval support)
    : kind_(kind), a_(a), b_(b), support_(support) {
    if (kind_ == Kind::normal) {
        norm_ = 1.0 - 2.0 * upper_tail_std(kNormalSupportSigmas);
    }
}

PriorComponent PriorComponent::uniform(double lo, double hi) {
    if (!(std::isfinite(lo) && std::isfinite(hi) && lo < hi)) {
        throw PreconditionError("uniform prior requires finite lo < hi");
    }
    return PriorComponent(Kind::uniform, lo, hi, {lo, hi});
}

PriorComponent PriorComponent::normal(double mean, double stddev) {
    if (!(std::isfinite(mean) && std::isfinite(stddev) && stddev > 0.0)) {
        throw PreconditionError("normal prior requires finite mean and stddev > 0");
    }
    const double half = kNormalSupportSigmas * stddev;
    return PriorComponent(Kind::normal, mean, stddev, {mean - half, mean + half});
}

double PriorComponent::log_pdf(double v) const {
    if (!support_.contains(v)) return kNegInf;
    if (kind_ == Kind::uniform) return -std::log(b_ - a_);
    const double z = (v - a_) / b_;
    return -0.5 * z * z - std::log(b_ * std::sqrt(2.0 * std::numbers::pi) * norm_);
}

double PriorComponent::pdf(double v) const { return std::exp(log_pdf(v)); }

double PriorComponent::upper_tail(double v) const { return upper_tail_std((v - a_) / b_); }

double PriorComponent::cdf(double v) const {
    if (v <= support_.lo) return 0.0;
    if (v >= support_.hi) return 1.0;
    if (kind_ == Kind::uniform) return (v - a_) / (b_ - a_);
    return (lower_tail((v - a_) / b_) - lower_tail(-kNormalSupportSigmas)) / norm_;
}

double PriorComponent::mass(const Interval& interval) const {
    const Interval c = clip(interval, support_);
    if (!(c.lo < c.hi)) return 0.0;
    if (kind_ == Kind::uniform) return c.width() / (b_ - a_);
    if (c.lo >= a_) return (upper_tail(c.lo) - upper_tail(c.hi)) / norm_;
    return (lower_tail((c.hi - a_) / b_) - lower_tail((c.lo - a_) / b_)) / norm_;
}

double PriorComponent::sample(const Interval& interval, Rng& rng) const {
    const Interval c = clip(interval, support_);
    const double u = uniform01(rng);
    if (kind_ == Kind::uniform) return c.lo + u * c.width();

    double z = 0.0;
    if (c.lo >= a_) {
        const double q_lo = upper_tail(c.lo);
        const double q_hi = upper_tail(c.hi);
        const double q = q_lo - u * (q_lo - q_hi);
        z = q > 0.0 ? std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * q) : kNormalSupportSigmas;
    } else {
        const double p_lo = lower_tail((c.lo - a_) / b_);
        const double p_hi = lower_tail((c.hi - a_) / b_);
        const double p = p_lo + u * (p_hi - p_lo);
        z = p > 0.0 ? -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * p) : -kNormalSupportSigmas;
    }
    return std::clamp(a_ + b_ * z, c.lo, c.hi);
}

TruncationRegion::TruncationRegion(std::vector<Interval> intervals) : intervals_(std::move(intervals)) {
    for (const auto& iv : intervals_) {
        if (!(iv.lo < iv.hi)) throw PreconditionError("truncation region requires lo < hi in every dimension");
    }
}

TruncationRegion::TruncationRegion(std::vector<Interval> intervals, const TruncationRegion& support) {
    if (intervals.size() != support.dims()) {
        throw PreconditionError("truncation region dimension does not match the support");
    }
    for (std::size_t d = 0; d < intervals.size(); ++d) {
        intervals[d] = clip(intervals[d], support[d]);
    }
    *this = TruncationRegion(std::move(intervals));
}

bool TruncationRegion::contains(std::span<const double> theta) const {
    if (theta.size() != intervals_.size()) return false;
    for (std::size_t d = 0; d < theta.size(); ++d) {
        if (!intervals_[d].contains(theta[d])) return false;
    }
    return true;
}

bool TruncationRegion::contains(const TruncationRegion& other) const {
    if (other.dims() != dims()) return false;
    for (std::size_t d = 0; d < dims(); ++d) {
        if (!intervals_[d].contains(other[d])) return false;
    }
    return true;
}

double TruncationRegion::volume() const {
    double v = 1.0;
    for (const auto& iv : intervals_) v *= iv.width();
    return v;
}

TruncationRegion TruncationRegion::select(std::span<const std::size_t> dims) const {
    std::vector<Interval> out;
    out.reserve(dims.size());
    for (std::size_t d : dims) out.push_back(intervals_.at(d));
    return TruncationRegion(std::move(out));
}

FactorizablePrior::FactorizablePrior(std::vector<PriorComponent> components) : components_(std::move(components)) {
    if (components_.empty()) throw PreconditionError("prior needs at least one component");
    std::vector<Interval> box;
    box.reserve(components_.size());
    for (const auto& c : components_) box.push_back(c.support());
    support_ = TruncationRegion(std::move(box));
}

FactorizablePrior FactorizablePrior::unit_cube(std::size_t dims) {
    return FactorizablePrior(std::vector<PriorComponent>(dims, PriorComponent::uniform(0.0, 1.0)));
}

double FactorizablePrior::log_pdf(std::span<const double> theta) const {
    if (theta.size() != dims()) throw PreconditionError("theta has the wrong number of entries");
    double total = 0.0;
    for (std::size_t d = 0; d < dims(); ++d) {
        total += components_[d].log_pdf(theta[d]);
        if (total == kNegInf) break;
    }
    return total;
}

double FactorizablePrior::mass(const TruncationRegion& region) const {
    if (region.dims() != dims()) throw PreconditionError("region dimension does not match the prior");
    double m = 1.0;
    for (std::size_t d = 0; d < dims(); ++d) m *= components_[d].mass(region[d]);
    return m;
}

FactorizablePrior FactorizablePrior::marginal(std::span<const std::size_t> dims) const {
    std::vector<PriorComponent> out;
    out.reserve(dims.size());
    for (std::size_t d : dims) out.push_back(components_.at(d));
    return FactorizablePrior(std::move(out));
}

TruncatedPrior::TruncatedPrior(FactorizablePrior base, TruncationRegion region)
    : base_(std::move(base)), region_(std::move(region)) {
    const double v = base_.mass(region_);
    if (!(v > 0.0)) throw RuntimeFailure("empty truncation");
    log_norm_ = std::log(std::min(v, 1.0));
}

double TruncatedPrior::log_density(std::span<const double> theta) const {
    if (!region_.contains(theta)) return kNegInf;
    return base_.log_pdf(theta) - log_norm_;
}

Matrix TruncatedPrior::sample(std::size_t n, Rng& rng) const { return sample_truncated(base_, region_, n, rng); }

Matrix sample_truncated(const FactorizablePrior& prior, const TruncationRegion& region, std::size_t n, Rng& rng) {
    if (region.dims() != prior.dims()) throw PreconditionError("region dimension does not match the prior");
    if (!prior.support().contains(region)) throw PreconditionError("region is not inside the prior support");
    for (std::size_t d = 0; d < prior.dims(); ++d) {
        if (!(prior.component(d).mass(region[d]) > 0.0)) throw RuntimeFailure("empty truncation");
    }
    Matrix out(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(prior.dims()));
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
        for (std::size_t d = 0; d < prior.dims(); ++d) {
            out(i, static_cast<Eigen::Index>(d)) = prior.component(d).sample(region[d], rng);
        }
    }
    return out;
}

double mass_ratio(const FactorizablePrior& prior, const TruncationRegion& inner, const TruncationRegion& outer) {
    if (inner.dims() != prior.dims() || outer.dims() != prior.dims()) {
        throw PreconditionError("region dimension does not match the prior");
    }
    if (!outer.contains(inner)) throw PreconditionError("mass_ratio requires inner to be inside outer");
    double ratio = 1.0;
    for (std::size_t d = 0; d < prior.dims(); ++d) {
        const double denom = prior.component(d).mass(outer[d]);
        if (!(denom > 0.0)) throw RuntimeFailure("outer region carries zero prior mass");
        ratio *= prior.component(d).mass(inner[d]) / denom;
    }
    return ratio;
}

double log_density(const TruncatedPrior& prior, std::span<const double> theta) { return prior.log_density(theta); }

}  // namespace tmnre
