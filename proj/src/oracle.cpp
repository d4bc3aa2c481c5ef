#include "tmnre/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include <boost/math/special_functions/erf.hpp>

#include "tmnre/errors.hpp"
#include "tmnre/parallel.hpp"

namespace tmnre {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double phi_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }
double phi_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }

double log_lik(const Simulator& sim, std::span<const double> x_o, const Vector& theta) {
    const auto v = sim.log_likelihood(x_o, {theta.data(), static_cast<std::size_t>(theta.size())});
    return v ? *v : kNegInf;
}

// Coordinate search from `start`, staying inside the prior support.
Vector polish(const Simulator& sim, const FactorizablePrior& prior, std::span<const double> x_o, Vector start, double& best) {
    const auto& box = prior.support();
    Vector step(start.size());
    for (Eigen::Index d = 0; d < start.size(); ++d) step[d] = 0.05 * box[static_cast<std::size_t>(d)].width();
    for (int iter = 0; iter < 2000; ++iter) {
        bool improved = false;
        for (Eigen::Index d = 0; d < start.size(); ++d) {
            const Interval& iv = box[static_cast<std::size_t>(d)];
            for (double sign : {1.0, -1.0}) {
                Vector trial = start;
                trial[d] = std::clamp(trial[d] + sign * step[d], iv.lo, iv.hi);
                const double v = log_lik(sim, x_o, trial);
                if (v > best) {
                    best = v;
                    start = trial;
                    improved = true;
                }
            }
        }
        if (!improved) {
            step *= 0.5;
            if ((step.array() < 1e-12).all()) break;
        }
    }
    return start;
}

}  // namespace

void ReferencePosterior::save_csv(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw RuntimeFailure("cannot write " + path.string());
    out.precision(17);
    out << "# " << nlohmann::json{{"simulator", simulator},
                                  {"x_o", std::vector<double>(x_o.data(), x_o.data() + x_o.size())},
                                  {"method", method},
                                  {"acceptance_rate", acceptance_rate},
                                  {"proposals", proposals}}
                       .dump()
        << '\n';
    for (Eigen::Index j = 0; j < samples.cols(); ++j) out << (j > 0 ? "," : "") << "theta_" << j;
    out << '\n';
    for (Eigen::Index i = 0; i < samples.rows(); ++i) {
        for (Eigen::Index j = 0; j < samples.cols(); ++j) out << (j > 0 ? "," : "") << samples(i, j);
        out << '\n';
    }
}

ReferencePosterior ReferencePosterior::load_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw RuntimeFailure("cannot open " + path.string());
    ReferencePosterior ref;
    std::string line;
    std::getline(in, line);
    if (line.rfind("# ", 0) != 0) throw RuntimeFailure("reference file lacks its metadata line: " + path.string());
    const auto meta = nlohmann::json::parse(line.substr(2));
    ref.simulator = meta.at("simulator").get<std::string>();
    const auto xo = meta.at("x_o").get<std::vector<double>>();
    ref.x_o = Eigen::Map<const Vector>(xo.data(), static_cast<Eigen::Index>(xo.size()));
    ref.method = meta.at("method").get<std::string>();
    ref.acceptance_rate = meta.value("acceptance_rate", 0.0);
    ref.proposals = meta.value("proposals", std::size_t{0});
    std::getline(in, line);
    const auto cols = static_cast<Eigen::Index>(std::count(line.begin(), line.end(), ',') + 1);
    std::vector<double> values;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) values.push_back(std::stod(cell));
    }
    if (values.size() % static_cast<std::size_t>(cols) != 0) throw RuntimeFailure("ragged reference file " + path.string());
    const auto rows = static_cast<Eigen::Index>(values.size()) / cols;
    ref.samples = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(values.data(), rows, cols);
    return ref;
}

ReferencePosterior likelihood_rejection(const Simulator& sim, const FactorizablePrior& prior, std::span<const double> x_o,
                                        std::size_t n, Rng& rng, const LikelihoodRejectionOptions& options) {
    if (!sim.has_likelihood()) throw PreconditionError("likelihood_rejection needs a tractable likelihood");
    if (n == 0) throw PreconditionError("likelihood_rejection needs n >= 1");
    if (prior.dims() != sim.param_dim() || x_o.size() != sim.data_dim()) throw PreconditionError("dimension mismatch");
    const auto& box = prior.support();

    auto evaluate = [&](const Matrix& thetas) {
        Vector out(thetas.rows());
        parallel_for(static_cast<std::size_t>(thetas.rows()), options.workers, [&](std::size_t i) {
            const auto r = static_cast<Eigen::Index>(i);
            out[r] = log_lik(sim, x_o, thetas.row(r).transpose());
        });
        return out;
    };

    const Matrix pilot = sample_truncated(prior, box, std::max<std::size_t>(options.pilot, 1), rng);
    const Vector pilot_ll = evaluate(pilot);
    Eigen::Index arg = 0;
    double best = pilot_ll.maxCoeff(&arg);
    if (!std::isfinite(best)) throw RuntimeFailure("likelihood is zero on every pilot draw");
    polish(sim, prior, x_o, pilot.row(arg).transpose(), best);
    const double log_bound = best + std::log(options.safety);

    ReferencePosterior ref;
    ref.simulator = sim.name();
    ref.x_o = Eigen::Map<const Vector>(x_o.data(), static_cast<Eigen::Index>(x_o.size()));
    ref.method = "likelihood-rejection";
    ref.samples.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(prior.dims()));
    std::size_t accepted = 0;
    while (accepted < n) {
        const Matrix proposals = sample_truncated(prior, box, options.batch, rng);
        const Vector ll = evaluate(proposals);
        for (Eigen::Index i = 0; i < proposals.rows() && accepted < n; ++i) {
            ++ref.proposals;
            if (std::log(uniform01(rng)) < ll[i] - log_bound) ref.samples.row(static_cast<Eigen::Index>(accepted++)) = proposals.row(i);
        }
        if (ref.proposals >= options.patience &&
            static_cast<double>(accepted) / static_cast<double>(ref.proposals) < options.min_acceptance) {
            throw RuntimeFailure("likelihood rejection acceptance below " + std::to_string(options.min_acceptance) +
                                 "; use a grid reference instead");
        }
    }
    ref.acceptance_rate = static_cast<double>(accepted) / static_cast<double>(ref.proposals);
    return ref;
}

TruncatedNormal::TruncatedNormal(double mu, double sigma, double lo, double hi)
    : mu_(mu), sigma_(sigma), lo_(lo), hi_(hi), alpha_((lo - mu) / sigma), beta_((hi - mu) / sigma) {
    if (!(sigma > 0.0) || !(lo < hi)) throw PreconditionError("truncated normal needs sigma > 0 and lo < hi");
    // Work in the tail that keeps precision.
    z_ = alpha_ > 0.0 ? phi_cdf(-alpha_) - phi_cdf(-beta_) : phi_cdf(beta_) - phi_cdf(alpha_);
    if (!(z_ > 0.0)) throw PreconditionError("truncated normal has no mass on the interval");
}

double TruncatedNormal::pdf(double v) const {
    if (v < lo_ || v > hi_) return 0.0;
    return phi_pdf((v - mu_) / sigma_) / (sigma_ * z_);
}

double TruncatedNormal::log_pdf(double v) const {
    if (v < lo_ || v > hi_) return kNegInf;
    const double z = (v - mu_) / sigma_;
    return -0.5 * z * z - 0.5 * std::log(2.0 * std::numbers::pi) - std::log(sigma_ * z_);
}

double TruncatedNormal::cdf(double v) const {
    if (v <= lo_) return 0.0;
    if (v >= hi_) return 1.0;
    const double z = (v - mu_) / sigma_;
    if (alpha_ > 0.0) return (phi_cdf(-alpha_) - phi_cdf(-z)) / z_;
    return (phi_cdf(z) - phi_cdf(alpha_)) / z_;
}

double TruncatedNormal::mean() const { return mu_ + sigma_ * (phi_pdf(alpha_) - phi_pdf(beta_)) / z_; }

double TruncatedNormal::variance() const {
    const double a = std::isfinite(alpha_) ? alpha_ * phi_pdf(alpha_) : 0.0;
    const double b = std::isfinite(beta_) ? beta_ * phi_pdf(beta_) : 0.0;
    const double r = (phi_pdf(alpha_) - phi_pdf(beta_)) / z_;
    return sigma_ * sigma_ * (1.0 + (a - b) / z_ - r * r);
}

double TruncatedNormal::sample(Rng& rng) const {
    const double u = uniform01(rng);
    double z = 0.0;
    if (alpha_ > 0.0) {
        const double q = phi_cdf(-alpha_) - u * z_;  // upper tail mass above the draw
        z = std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * q);
    } else {
        const double p = phi_cdf(alpha_) + u * z_;
        z = -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * p);
    }
    return std::clamp(mu_ + sigma_ * z, lo_, hi_);
}

std::vector<TruncatedNormal> analytic_posterior(const GaussianDiagSimulator& sim, std::span<const double> x_o,
                                                const FactorizablePrior& prior) {
    if (x_o.size() != sim.data_dim() || prior.dims() != sim.param_dim()) throw PreconditionError("dimension mismatch");
    std::vector<TruncatedNormal> out;
    for (std::size_t d = 0; d < x_o.size(); ++d) {
        const auto& comp = prior.component(d);
        if (comp.kind() != PriorComponent::Kind::uniform) throw PreconditionError("analytic posterior needs uniform priors");
        out.emplace_back(x_o[d], sim.sigma(), comp.support().lo, comp.support().hi);
    }
    return out;
}

ReferencePosterior analytic_reference(const GaussianDiagSimulator& sim, std::span<const double> x_o,
                                      const FactorizablePrior& prior, std::size_t n, Rng& rng) {
    if (n == 0) throw PreconditionError("reference needs n >= 1");
    const auto post = analytic_posterior(sim, x_o, prior);
    ReferencePosterior ref;
    ref.simulator = sim.name();
    ref.x_o = Eigen::Map<const Vector>(x_o.data(), static_cast<Eigen::Index>(x_o.size()));
    ref.method = "analytic";
    ref.acceptance_rate = 1.0;
    ref.proposals = n;
    ref.samples.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(post.size()));
    for (Eigen::Index i = 0; i < ref.samples.rows(); ++i) {
        for (std::size_t d = 0; d < post.size(); ++d) ref.samples(i, static_cast<Eigen::Index>(d)) = post[d].sample(rng);
    }
    return ref;
}

FunctionRatioModel analytic_ratio_head(const GaussianDiagSimulator& sim, const FactorizablePrior& prior,
                                       const TruncationRegion& region, std::size_t dim) {
    if (dim >= sim.param_dim()) throw PreconditionError("dimension out of range");
    const Interval iv = region[dim];
    const double sigma = sim.sigma();
    const double log_prior = std::log(prior.component(dim).mass(iv)) - prior.component(dim).log_pdf(iv.center());
    // Posterior under p_Gamma is N(x, sigma^2) truncated to the region
    // interval; r = posterior / p_Gamma.
    return FunctionRatioModel(MarginalIndex({dim}), [=](std::span<const double> x, std::span<const double> p) {
        const TruncatedNormal post(x[dim], sigma, iv.lo, iv.hi);
        return post.log_pdf(p[0]) + log_prior;
    });
}

ReferencePosterior eggbox_reference(const EggboxSimulator& sim, std::span<const double> x_o, std::size_t n, Rng& rng) {
    if (n == 0) throw PreconditionError("eggbox reference needs n >= 1");
    if (x_o.size() != sim.data_dim()) throw PreconditionError("x_o dimension does not match the simulator");
    const double inv_two_var = 1.0 / (2.0 * sim.sigma() * sim.sigma());
    ReferencePosterior ref;
    ref.simulator = sim.name();
    ref.x_o = Eigen::Map<const Vector>(x_o.data(), static_cast<Eigen::Index>(x_o.size()));
    ref.method = "likelihood-rejection";
    ref.samples.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(x_o.size()));
    std::size_t accepted_total = 0;
    for (std::size_t d = 0; d < x_o.size(); ++d) {
        const double x = x_o[d];
        const double best = x - std::clamp(x, 0.0, 1.0);
        const double log_bound = -best * best * inv_two_var;
        std::size_t tries = 0;
        for (Eigen::Index i = 0; i < ref.samples.rows();) {
            const double t = uniform01(rng);
            const double r = x - std::sin(std::numbers::pi * t);
            ++tries;
            if (std::log(uniform01(rng)) < -r * r * inv_two_var - log_bound) ref.samples(i++, static_cast<Eigen::Index>(d)) = t;
            if (tries > 1000 * n + 1'000'000 && static_cast<std::size_t>(i) * 1'000'000 < tries) {
                throw RuntimeFailure("eggbox reference acceptance vanished in dimension " + std::to_string(d));
            }
        }
        ref.proposals += tries;
        accepted_total += n;
    }
    ref.acceptance_rate = static_cast<double>(accepted_total) / static_cast<double>(ref.proposals);
    return ref;
}

}  // namespace tmnre
