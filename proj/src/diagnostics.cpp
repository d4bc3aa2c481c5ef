#include "tmnre/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <set>

#include "tmnre/errors.hpp"
#include "tmnre/neural.hpp"
#include "tmnre/parallel.hpp"

namespace tmnre {
namespace {

// Two hidden ReLU layers and a logit output, parameters in one flat vector:
// W1 (h x d), b1, W2 (h x h), b2, w3 (1 x h), b3.
class Mlp {
public:
    Mlp(Eigen::Index inputs, Eigen::Index hidden, Rng& rng) : d_(inputs), h_(hidden) {
        params_ = Vector::Zero(h_ * d_ + h_ + h_ * h_ + h_ + h_ + 1);
        std::uniform_real_distribution<double> unit(-1.0, 1.0);
        auto glorot = [&](Eigen::Index offset, Eigen::Index fan_out, Eigen::Index fan_in) {
            const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
            for (Eigen::Index i = 0; i < fan_out * fan_in; ++i) params_[offset + i] = limit * unit(rng);
        };
        glorot(w1(), h_, d_);
        glorot(w2(), h_, h_);
        glorot(w3(), 1, h_);
    }

    Vector& params() { return params_; }

    Vector logits(const Matrix& x) const {
        Matrix a1 = layer(x, w1(), b1(), h_, d_).cwiseMax(0.0);
        Matrix a2 = layer(a1, w2(), b2(), h_, h_).cwiseMax(0.0);
        return layer(a2, w3(), b3(), 1, h_);
    }

    double loss_and_gradient(const Matrix& x, const Vector& y, Vector& grad) const {
        const Matrix a1 = layer(x, w1(), b1(), h_, d_).cwiseMax(0.0);
        const Matrix a2 = layer(a1, w2(), b2(), h_, h_).cwiseMax(0.0);
        const Vector f = layer(a2, w3(), b3(), 1, h_);
        const auto n = static_cast<double>(x.rows());
        double loss = 0.0;
        Vector df(f.size());
        for (Eigen::Index i = 0; i < f.size(); ++i) {
            loss += bce_logit_loss(f[i], y[i]);
            df[i] = (1.0 / (1.0 + std::exp(-f[i])) - y[i]) / n;
        }
        grad.setZero(params_.size());
        Eigen::Map<Matrix>(grad.data() + w3(), 1, h_) = df.transpose() * a2;
        grad[b3()] = df.sum();
        Matrix d2 = (df * Eigen::Map<const Matrix>(params_.data() + w3(), 1, h_)).cwiseProduct((a2.array() > 0.0).cast<double>().matrix());
        Eigen::Map<Matrix>(grad.data() + w2(), h_, h_) = d2.transpose() * a1;
        Eigen::Map<Vector>(grad.data() + b2(), h_) = d2.colwise().sum().transpose();
        Matrix d1 = (d2 * Eigen::Map<const Matrix>(params_.data() + w2(), h_, h_)).cwiseProduct((a1.array() > 0.0).cast<double>().matrix());
        Eigen::Map<Matrix>(grad.data() + w1(), h_, d_) = d1.transpose() * x;
        Eigen::Map<Vector>(grad.data() + b1(), h_) = d1.colwise().sum().transpose();
        return loss / n;
    }

private:
    Eigen::Index w1() const { return 0; }
    Eigen::Index b1() const { return h_ * d_; }
    Eigen::Index w2() const { return b1() + h_; }
    Eigen::Index b2() const { return w2() + h_ * h_; }
    Eigen::Index w3() const { return b2() + h_; }
    Eigen::Index b3() const { return w3() + h_; }

    Matrix layer(const Matrix& x, Eigen::Index w, Eigen::Index b, Eigen::Index out, Eigen::Index in) const {
        Matrix z = x * Eigen::Map<const Matrix>(params_.data() + w, out, in).transpose();
        z.rowwise() += Eigen::Map<const Vector>(params_.data() + b, out).transpose();
        return z;
    }

    Eigen::Index d_;
    Eigen::Index h_;
    Vector params_;
};

Matrix take_rows(const Matrix& m, std::span<const std::size_t> rows) {
    Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i]));
    return out;
}

double fold_accuracy(const Matrix& x, const Vector& y, std::span<const std::size_t> train, std::span<const std::size_t> test,
                     const C2stOptions& options, Rng& rng) {
    Mlp net(x.cols(), static_cast<Eigen::Index>(options.hidden_factor) * x.cols(), rng);
    AdamState adam;
    std::vector<std::size_t> order(train.begin(), train.end());
    const std::size_t batch = std::min(options.batch_size, order.size());
    double best = std::numeric_limits<double>::infinity();
    std::size_t stale = 0;
    Vector grad;
    Vector yb;
    for (std::size_t epoch = 0; epoch < options.max_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double total = 0.0;
        for (std::size_t start = 0; start < order.size(); start += batch) {
            const std::size_t len = std::min(batch, order.size() - start);
            const std::span<const std::size_t> rows(order.data() + start, len);
            const Matrix xb = take_rows(x, rows);
            yb.resize(static_cast<Eigen::Index>(len));
            for (std::size_t i = 0; i < len; ++i) yb[static_cast<Eigen::Index>(i)] = y[static_cast<Eigen::Index>(rows[i])];
            total += net.loss_and_gradient(xb, yb, grad) * static_cast<double>(len);
            adam_step(net.params(), grad, adam, options.learning_rate);
        }
        const double loss = total / static_cast<double>(order.size());
        if (loss > best - options.tolerance) {
            if (++stale > options.patience) break;
        } else {
            stale = 0;
        }
        best = std::min(best, loss);
    }
    const Vector f = net.logits(take_rows(x, test));
    std::size_t correct = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
        const bool predicted = f[static_cast<Eigen::Index>(i)] > 0.0;
        const bool actual = y[static_cast<Eigen::Index>(test[i])] > 0.5;
        correct += predicted == actual ? 1 : 0;
    }
    return static_cast<double>(correct) / static_cast<double>(test.size());
}

Matrix subsample(const Matrix& m, std::size_t n, Rng& rng) {
    std::vector<std::size_t> idx(static_cast<std::size_t>(m.rows()));
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (n < idx.size()) {
        std::shuffle(idx.begin(), idx.end(), rng);
        idx.resize(n);
        std::sort(idx.begin(), idx.end());
    }
    return take_rows(m, idx);
}

std::vector<std::vector<std::size_t>> subsets(std::size_t dims, std::size_t d) {
    std::vector<std::vector<std::size_t>> out;
    std::vector<std::size_t> cur;
    auto rec = [&](auto&& self, std::size_t start) -> void {
        if (cur.size() == d) {
            out.push_back(cur);
            return;
        }
        for (std::size_t i = start; i < dims; ++i) {
            cur.push_back(i);
            self(self, i + 1);
            cur.pop_back();
        }
    };
    rec(rec, 0);
    return out;
}

}  // namespace

nlohmann::json C2stOptions::to_json() const {
    return {{"classifier", "mlp-2x-relu"},
            {"folds", folds},
            {"hidden_factor", hidden_factor},
            {"learning_rate", learning_rate},
            {"batch_size", batch_size},
            {"max_epochs", max_epochs},
            {"patience", patience},
            {"tolerance", tolerance},
            {"max_samples", max_samples}};
}

double c2st(const Matrix& samples_p, const Matrix& samples_q, Rng& rng, const C2stOptions& options) {
    if (samples_p.cols() != samples_q.cols() || samples_p.cols() == 0) throw PreconditionError("c2st sample sets differ in dimension");
    std::size_t n = static_cast<std::size_t>(std::min(samples_p.rows(), samples_q.rows()));
    if (n < options.min_samples) throw PreconditionError("insufficient samples for c2st");
    if (options.folds < 2) throw PreconditionError("c2st needs at least two folds");
    if (options.max_samples > 0) n = std::min(n, options.max_samples);

    Matrix pool(2 * static_cast<Eigen::Index>(n), samples_p.cols());
    pool << subsample(samples_p, n, rng), subsample(samples_q, n, rng);
    if (!pool.allFinite()) throw PreconditionError("c2st samples contain non-finite values");
    Vector labels(pool.rows());
    labels.head(static_cast<Eigen::Index>(n)).setZero();
    labels.tail(static_cast<Eigen::Index>(n)).setOnes();
    const Matrix x = Standardizer::fit(pool).transform(pool);

    std::vector<std::size_t> order(static_cast<std::size_t>(pool.rows()));
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t k = 0; k < options.folds; ++k) {
        std::vector<std::size_t> train;
        std::vector<std::size_t> test;
        for (std::size_t i = 0; i < order.size(); ++i) (i % options.folds == k ? test : train).push_back(order[i]);
        total += fold_accuracy(x, labels, train, test, options, rng);
    }
    return total / static_cast<double>(options.folds);
}

nlohmann::json C2stReport::to_json() const {
    nlohmann::json entries_json = nlohmann::json::array();
    for (const auto& e : entries) entries_json.push_back({{"marginal", e.index.label()}, {"accuracy", e.accuracy}});
    nlohmann::json missing_json = nlohmann::json::array();
    for (const auto& m : missing) missing_json.push_back(m.label());
    return {{"d", d}, {"mean", mean}, {"entries", entries_json}, {"missing", missing_json}};
}

C2stReport c2st_ddm(const Matrix& reference_joint, const std::map<MarginalIndex, Matrix>& approx, std::size_t d, Rng& rng,
                    const C2stOptions& options) {
    const auto dims = static_cast<std::size_t>(reference_joint.cols());
    if (d == 0 || d > dims) throw PreconditionError("c2st_ddm needs 1 <= d <= D");
    C2stReport report;
    report.d = d;
    const std::uint64_t base = rng();
    std::size_t k = 0;
    for (auto& dims_k : subsets(dims, d)) {
        MarginalIndex index(dims_k);
        Rng entry_rng = make_rng(base, {k++});
        const auto it = approx.find(index);
        if (it == approx.end()) {
            report.missing.push_back(index);
            continue;
        }
        report.entries.push_back({index, c2st(index.select(reference_joint), it->second, entry_rng, options)});
    }
    if (report.entries.empty()) throw PreconditionError("c2st_ddm: no marginals available");
    double sum = 0.0;
    for (const auto& e : report.entries) sum += e.accuracy;
    report.mean = sum / static_cast<double>(report.entries.size());
    return report;
}

double kl_histogram(std::span<const double> samples_p, std::span<const double> samples_q, const KlOptions& options) {
    if (samples_p.empty() || samples_q.empty()) throw PreconditionError("kl_histogram needs non-empty sample sets");
    if (options.bins == 0 || !(options.pseudo_count > 0.0)) throw PreconditionError("kl_histogram needs bins >= 1 and pseudo_count > 0");
    const auto [p_lo, p_hi] = std::minmax_element(samples_p.begin(), samples_p.end());
    const auto [q_lo, q_hi] = std::minmax_element(samples_q.begin(), samples_q.end());
    const double lo = std::min(*p_lo, *q_lo);
    const double hi = std::max(*p_hi, *q_hi);
    if (!(hi > lo)) return 0.0;
    auto hist = [&](std::span<const double> s) {
        std::vector<double> h(options.bins, options.pseudo_count);
        for (double v : s) {
            const double f = (v - lo) / (hi - lo) * static_cast<double>(options.bins);
            h[std::min(static_cast<std::size_t>(std::max(f, 0.0)), options.bins - 1)] += 1.0;
        }
        const double total = std::accumulate(h.begin(), h.end(), 0.0);
        for (auto& v : h) v /= total;
        return h;
    };
    const auto p = hist(samples_p);
    const auto q = hist(samples_q);
    double kl = 0.0;
    for (std::size_t i = 0; i < options.bins; ++i) kl += p[i] * std::log(p[i] / q[i]);
    return std::max(kl, 0.0);
}

void CoverageCurve::write_csv(std::ostream& out) const {
    out.precision(17);
    out << "level,empirical,stderr\n";
    for (std::size_t i = 0; i < levels.size(); ++i) out << levels[i] << ',' << empirical[i] << ',' << stderr_[i] << '\n';
}

nlohmann::json CoverageCurve::to_json() const {
    return {{"marginal", index.label()}, {"draws", draws}, {"levels", levels}, {"empirical", empirical}, {"stderr", stderr_}};
}

std::vector<double> default_levels() {
    std::vector<double> out;
    for (int i = 1; i <= 9; ++i) out.push_back(0.1 * i);
    return out;
}

std::vector<CoverageCurve> coverage_test(std::span<const LogRatioModel* const> heads_1d, const Simulator& sim,
                                         const FactorizablePrior& prior, const TruncationRegion& region, std::size_t draws,
                                         std::span<const double> levels, Rng& rng, const CoverageOptions& options) {
    if (draws < 100) throw PreconditionError("coverage_test needs at least 100 draws");
    if (levels.empty()) throw PreconditionError("coverage_test needs at least one level");
    for (const auto* h : heads_1d) {
        if (h == nullptr || h->index().size() != 1) throw PreconditionError("coverage_test needs 1-d heads");
    }
    const std::size_t nh = heads_1d.size();
    const std::size_t nl = levels.size();
    std::vector<unsigned char> hits(draws * nh * nl, 0);
    const std::uint64_t base = rng();
    parallel_for(draws, options.workers, [&](std::size_t i) {
        Rng r = make_rng(base, {i});
        const Matrix theta = sample_truncated(prior, region, 1, r);
        const Vector x = sim.simulate({theta.data(), static_cast<std::size_t>(theta.cols())}, r);
        const std::span<const double> xs(x.data(), static_cast<std::size_t>(x.size()));
        for (std::size_t h = 0; h < nh; ++h) {
            const auto post = grid_posterior(*heads_1d[h], xs, prior, region, options.grid);
            const double truth = theta(0, static_cast<Eigen::Index>(heads_1d[h]->index()[0]));
            for (std::size_t l = 0; l < nl; ++l) {
                hits[(i * nh + h) * nl + l] = hpd_interval(post, levels[l]).contains(post, {&truth, 1}) ? 1 : 0;
            }
        }
    });
    std::vector<CoverageCurve> out(nh);
    for (std::size_t h = 0; h < nh; ++h) {
        auto& c = out[h];
        c.index = heads_1d[h]->index();
        c.levels.assign(levels.begin(), levels.end());
        c.draws = draws;
        for (std::size_t l = 0; l < nl; ++l) {
            std::size_t count = 0;
            for (std::size_t i = 0; i < draws; ++i) count += hits[(i * nh + h) * nl + l];
            const double p = static_cast<double>(count) / static_cast<double>(draws);
            c.empirical.push_back(p);
            c.stderr_.push_back(std::sqrt(p * (1.0 - p) / static_cast<double>(draws)));
        }
    }
    return out;
}

nlohmann::json BoundaryReport::to_json() const {
    return {{"passed", passed}, {"level", level}, {"offending_dims", offending_dims}};
}

BoundaryReport boundary_check(const GridPosterior& posterior, double level, const TruncationRegion* support) {
    if (!(level > 0.0 && level <= 1.0)) throw PreconditionError("boundary level must lie in (0, 1]");
    std::vector<bool> mask;
    if (level >= 1.0) {
        for (Eigen::Index i = 0; i < posterior.density.size(); ++i) mask.push_back(posterior.density[i] > 0.0);
    } else {
        mask = hpd_interval(posterior, level).mask;
    }
    BoundaryReport report;
    report.level = level;
    std::set<std::size_t> offending;
    const std::size_t dims = posterior.dims();
    auto on_support_edge = [&](std::size_t k, bool upper) {
        if (support == nullptr) return false;
        const Vector& axis = posterior.axes[k];
        const Interval& iv = (*support)[posterior.index[k]];
        const double tol = 1e-12 * std::max(1.0, iv.width());
        return upper ? std::abs(axis[axis.size() - 1] - iv.hi) <= tol : std::abs(axis[0] - iv.lo) <= tol;
    };
    const auto n0 = static_cast<std::size_t>(posterior.axes[0].size());
    const std::size_t n1 = dims == 2 ? static_cast<std::size_t>(posterior.axes[1].size()) : 1;
    for (std::size_t cell = 0; cell < mask.size(); ++cell) {
        if (!mask[cell]) continue;
        const std::size_t i = cell / n1;
        const std::size_t j = cell % n1;
        if ((i == 0 && !on_support_edge(0, false)) || (i + 1 == n0 && !on_support_edge(0, true))) offending.insert(posterior.index[0]);
        if (dims == 2 && ((j == 0 && !on_support_edge(1, false)) || (j + 1 == n1 && !on_support_edge(1, true)))) {
            offending.insert(posterior.index[1]);
        }
    }
    report.offending_dims.assign(offending.begin(), offending.end());
    report.passed = report.offending_dims.empty();
    return report;
}

}  // namespace tmnre
