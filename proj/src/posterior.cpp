#include "tmnre/posterior.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>

#include "tmnre/errors.hpp"

namespace tmnre {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

Vector linspace(const Interval& iv, std::size_t n) {
    return Vector::LinSpaced(static_cast<Eigen::Index>(n), iv.lo, iv.hi);
}

Vector trapezoid_weights(const Vector& axis) {
    const Eigen::Index n = axis.size();
    Vector w = Vector::Zero(n);
    for (Eigen::Index i = 0; i + 1 < n; ++i) {
        const double h = axis[i + 1] - axis[i];
        w[i] += 0.5 * h;
        w[i + 1] += 0.5 * h;
    }
    return w;
}

// Row-major tensor grid over the axes.
Matrix grid_points(const std::vector<Vector>& axes) {
    if (axes.size() == 1) return axes[0];
    const Eigen::Index a = axes[0].size();
    const Eigen::Index b = axes[1].size();
    Matrix out(a * b, 2);
    for (Eigen::Index i = 0; i < a; ++i) {
        for (Eigen::Index j = 0; j < b; ++j) {
            out(i * b + j, 0) = axes[0][i];
            out(i * b + j, 1) = axes[1][j];
        }
    }
    return out;
}

void check_index_supported(const MarginalIndex& index) {
    if (index.size() < 1 || index.size() > 2) throw PreconditionError("grid posteriors support 1-d and 2-d marginals only");
}

// Position of v on an evenly spaced axis: cell i and fraction t in [0, 1].
bool locate(const Vector& axis, double v, Eigen::Index& i, double& t) {
    const Eigen::Index n = axis.size();
    if (n < 2 || v < axis[0] || v > axis[n - 1]) return false;
    const double h = (axis[n - 1] - axis[0]) / static_cast<double>(n - 1);
    i = std::min<Eigen::Index>(static_cast<Eigen::Index>((v - axis[0]) / h), n - 2);
    t = std::clamp((v - axis[i]) / h, 0.0, 1.0);
    return true;
}

std::size_t bin_of(double v, double lo, double hi, std::size_t bins) {
    const double f = (v - lo) / (hi - lo) * static_cast<double>(bins);
    return std::min(static_cast<std::size_t>(std::max(f, 0.0)), bins - 1);
}

}  // namespace

Vector GridPosterior::weights() const {
    if (axes.size() == 1) return trapezoid_weights(axes[0]);
    const Vector a = trapezoid_weights(axes[0]);
    const Vector b = trapezoid_weights(axes[1]);
    Vector w(a.size() * b.size());
    for (Eigen::Index i = 0; i < a.size(); ++i) w.segment(i * b.size(), b.size()) = a[i] * b;
    return w;
}

double GridPosterior::interpolate(std::span<const double> params) const {
    if (params.size() != axes.size()) throw PreconditionError("interpolation point has the wrong dimension");
    Eigen::Index i = 0;
    double t = 0.0;
    if (!locate(axes[0], params[0], i, t)) return 0.0;
    if (axes.size() == 1) return (1.0 - t) * density[i] + t * density[i + 1];
    Eigen::Index j = 0;
    double u = 0.0;
    if (!locate(axes[1], params[1], j, u)) return 0.0;
    const Eigen::Index b = axes[1].size();
    auto at = [&](Eigen::Index r, Eigen::Index c) { return density[r * b + c]; };
    return (1.0 - t) * ((1.0 - u) * at(i, j) + u * at(i, j + 1)) + t * ((1.0 - u) * at(i + 1, j) + u * at(i + 1, j + 1));
}

Vector log_truncated_marginal(const FactorizablePrior& prior, const TruncationRegion& region, const MarginalIndex& index,
                              const Matrix& params) {
    if (static_cast<std::size_t>(params.cols()) != index.size()) throw PreconditionError("parameter width does not match the index");
    Vector out = Vector::Zero(params.rows());
    for (std::size_t j = 0; j < index.size(); ++j) {
        const auto& comp = prior.component(index[j]);
        const Interval& iv = region[index[j]];
        const double log_mass = std::log(comp.mass(iv));
        for (Eigen::Index i = 0; i < params.rows(); ++i) {
            const double v = params(i, static_cast<Eigen::Index>(j));
            out[i] += iv.contains(v) ? comp.log_pdf(v) - log_mass : kNegInf;
        }
    }
    return out;
}

GridPosterior grid_posterior(const LogRatioModel& est, std::span<const double> x_o, const FactorizablePrior& prior,
                             const TruncationRegion& region, std::size_t grid) {
    const auto& index = est.index();
    check_index_supported(index);
    if (grid < 2) throw PreconditionError("grid needs at least two points per axis");
    if (region.dims() != prior.dims()) throw PreconditionError("region dimension does not match the prior");
    GridPosterior out;
    out.index = index;
    for (auto d : index.dims()) out.axes.push_back(linspace(region[d], grid));
    const Matrix params = grid_points(out.axes);
    out.log_unnormalized = est.log_ratio(x_o, params) + log_truncated_marginal(prior, region, index, params);

    double peak = kNegInf;
    for (Eigen::Index i = 0; i < out.log_unnormalized.size(); ++i) {
        const double v = out.log_unnormalized[i];
        if (std::isnan(v)) throw RuntimeFailure("degenerate posterior: ratio is NaN on the grid");
        if (std::isfinite(v)) peak = std::max(peak, v);
    }
    if (peak == kNegInf) throw RuntimeFailure("degenerate posterior");
    Vector scaled = (out.log_unnormalized.array() - peak).exp().matrix();
    const double z = out.weights().dot(scaled);
    if (!(z > 0.0) || !std::isfinite(z)) throw RuntimeFailure("degenerate posterior");
    out.density = scaled / z;
    out.log_normalizer = peak + std::log(z);
    return out;
}

void WeightedHistogram::write_csv(std::ostream& out) const {
    out.precision(17);
    if (edges.size() == 1) {
        out << "bin_lo,bin_hi,weight\n";
        for (std::size_t i = 0; i < bins(0); ++i) {
            const auto k = static_cast<Eigen::Index>(i);
            out << edges[0][k] << ',' << edges[0][k + 1] << ',' << weights[k] << '\n';
        }
        return;
    }
    out << "bin_i,bin_j,weight\n";
    for (std::size_t i = 0; i < bins(0); ++i) {
        for (std::size_t j = 0; j < bins(1); ++j) {
            out << i << ',' << j << ',' << weights[static_cast<Eigen::Index>(i * bins(1) + j)] << '\n';
        }
    }
}

namespace {

WeightedHistogram histogram_from_log_weights(const MarginalIndex& index, const Matrix& samples, const Vector& log_w,
                                             const TruncationRegion& region, std::size_t bins) {
    check_index_supported(index);
    if (bins == 0) throw PreconditionError("histogram needs at least one bin");
    if (static_cast<std::size_t>(samples.cols()) != index.size()) throw PreconditionError("sample width does not match the index");
    const TruncationRegion box = region.select(index.dims());
    WeightedHistogram h;
    h.index = index;
    for (std::size_t d = 0; d < index.size(); ++d) h.edges.push_back(linspace(box[d], bins + 1));
    const std::size_t cells = index.size() == 1 ? bins : bins * bins;
    h.weights = Vector::Zero(static_cast<Eigen::Index>(cells));

    double peak = kNegInf;
    std::vector<Eigen::Index> inside;
    for (Eigen::Index i = 0; i < samples.rows(); ++i) {
        const Vector row = samples.row(i).transpose();
        if (!box.contains({row.data(), static_cast<std::size_t>(row.size())})) continue;
        inside.push_back(i);
        if (std::isfinite(log_w[i])) peak = std::max(peak, log_w[i]);
    }
    if (inside.empty()) throw PreconditionError("no samples inside the region");
    if (peak == kNegInf) throw RuntimeFailure("degenerate posterior: every histogram weight is zero");
    for (auto i : inside) {
        std::size_t cell = bin_of(samples(i, 0), box[0].lo, box[0].hi, bins);
        if (index.size() == 2) cell = cell * bins + bin_of(samples(i, 1), box[1].lo, box[1].hi, bins);
        h.weights[static_cast<Eigen::Index>(cell)] += std::exp(log_w[i] - peak);
    }
    h.weights /= h.weights.sum();
    h.sample_count = inside.size();
    return h;
}

}  // namespace

WeightedHistogram weighted_histogram(const LogRatioModel& est, std::span<const double> x_o, const Matrix& prior_samples,
                                     const TruncationRegion& region, std::size_t bins) {
    const Vector log_w = est.log_ratio(x_o, prior_samples);
    return histogram_from_log_weights(est.index(), prior_samples, log_w, region, bins);
}

WeightedHistogram sample_histogram(const MarginalIndex& index, const Matrix& samples, const TruncationRegion& region,
                                   std::size_t bins) {
    return histogram_from_log_weights(index, samples, Vector::Zero(samples.rows()), region, bins);
}

nlohmann::json PosteriorSamples::metadata() const {
    return {{"index", index.dims()},
            {"count", samples.rows()},
            {"acceptance_rate", acceptance_rate},
            {"log_bound", log_bound},
            {"bound", std::exp(log_bound)},
            {"proposals", proposals},
            {"clipped", clipped}};
}

void PosteriorSamples::write_csv(std::ostream& out) const {
    out.precision(17);
    for (std::size_t j = 0; j < index.size(); ++j) out << (j > 0 ? "," : "") << "theta_" << index[j];
    out << '\n';
    for (Eigen::Index i = 0; i < samples.rows(); ++i) {
        for (Eigen::Index j = 0; j < samples.cols(); ++j) out << (j > 0 ? "," : "") << samples(i, j);
        out << '\n';
    }
}

PosteriorSamples rejection_sample(const LogRatioModel& est, std::span<const double> x_o, const FactorizablePrior& prior,
                                  const TruncationRegion& region, std::size_t n, Rng& rng, const RejectionOptions& options) {
    if (n == 0) throw PreconditionError("rejection_sample needs n >= 1");
    const auto& index = est.index();
    check_index_supported(index);
    const std::size_t grid = options.grid > 0 ? options.grid : (index.size() == 1 ? 1000 : 100);

    std::vector<Vector> axes;
    for (auto d : index.dims()) axes.push_back(linspace(region[d], grid));
    const Vector grid_log_r = est.log_ratio(x_o, grid_points(axes));
    double peak = kNegInf;
    for (Eigen::Index i = 0; i < grid_log_r.size(); ++i) {
        if (std::isfinite(grid_log_r[i])) peak = std::max(peak, grid_log_r[i]);
    }
    if (peak == kNegInf) throw RuntimeFailure("degenerate posterior: no finite ratio on the grid");

    PosteriorSamples out;
    out.index = index;
    out.log_bound = peak + std::log(options.safety);
    out.samples.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(index.size()));
    const FactorizablePrior marginal = prior.marginal(index.dims());
    const TruncationRegion box = region.select(index.dims());
    std::size_t accepted = 0;
    while (accepted < n) {
        const Matrix proposals = sample_truncated(marginal, box, options.batch, rng);
        const Vector log_r = est.log_ratio(x_o, proposals);
        for (Eigen::Index i = 0; i < proposals.rows() && accepted < n; ++i) {
            ++out.proposals;
            const double log_accept = log_r[i] - out.log_bound;
            if (log_accept > 0.0) ++out.clipped;
            if (std::log(uniform01(rng)) < log_accept) out.samples.row(static_cast<Eigen::Index>(accepted++)) = proposals.row(i);
        }
        const double rate = static_cast<double>(accepted) / static_cast<double>(out.proposals);
        if (out.proposals >= options.abort_after && rate < options.min_acceptance) {
            throw RuntimeFailure("vanishing acceptance: " + std::to_string(accepted) + " accepted of " +
                                 std::to_string(out.proposals) + " proposals");
        }
    }
    out.acceptance_rate = static_cast<double>(accepted) / static_cast<double>(out.proposals);
    return out;
}

bool HpdSet::contains(const GridPosterior& posterior, std::span<const double> params) const {
    const double v = posterior.interpolate(params);
    return v > 0.0 && v >= threshold;
}

HpdSet hpd_interval(const GridPosterior& posterior, double credibility) {
    if (!(credibility > 0.0 && credibility < 1.0)) throw PreconditionError("credibility must lie in (0, 1)");
    const Vector& density = posterior.density;
    const Vector cell_mass = posterior.weights().cwiseProduct(density);
    std::vector<Eigen::Index> order(static_cast<std::size_t>(density.size()));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return density[a] > density[b]; });

    HpdSet out;
    out.mask.assign(order.size(), false);
    for (auto i : order) {
        if (out.mass >= credibility) break;
        out.mask[static_cast<std::size_t>(i)] = true;
        out.mass += cell_mass[i];
        out.threshold = density[i];
    }
    if (posterior.dims() == 1) {
        const Vector& axis = posterior.axes[0];
        const Eigen::Index n = axis.size();
        const double half = 0.5 * (axis[n - 1] - axis[0]) / static_cast<double>(n - 1);
        for (Eigen::Index i = 0; i < n;) {
            if (!out.mask[static_cast<std::size_t>(i)]) {
                ++i;
                continue;
            }
            Eigen::Index j = i;
            while (j + 1 < n && out.mask[static_cast<std::size_t>(j + 1)]) ++j;
            out.intervals.push_back({std::max(axis[i] - half, axis[0]), std::min(axis[j] + half, axis[n - 1])});
            i = j + 1;
        }
    }
    return out;
}

}  // namespace tmnre
