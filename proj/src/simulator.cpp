#include "tmnre/simulator.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "tmnre/errors.hpp"
#include "tmnre/parallel.hpp"

namespace tmnre {
namespace {

Eigen::Map<const Vector> as_vector(std::span<const double> v) {
    return {v.data(), static_cast<Eigen::Index>(v.size())};
}

void check_theta(std::span<const double> theta, std::size_t dims) {
    if (theta.size() != dims) throw PreconditionError("theta has the wrong number of entries");
}

}  // namespace

std::optional<double> Simulator::log_likelihood(std::span<const double>, std::span<const double>) const {
    return std::nullopt;
}

Vector DiagonalGaussianSimulator::simulate(std::span<const double> theta, Rng& rng) const {
    Vector x = mean(theta);
    const Vector& sd = noise_std();
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Eigen::Index i = 0; i < x.size(); ++i) x[i] += sd[i] * normal(rng);
    return x;
}

std::optional<double> DiagonalGaussianSimulator::log_likelihood(std::span<const double> x,
                                                                std::span<const double> theta) const {
    const Vector mu = mean(theta);
    const Vector& sd = noise_std();
    if (static_cast<Eigen::Index>(x.size()) != mu.size()) throw PreconditionError("x has the wrong number of entries");
    double total = 0.0;
    for (Eigen::Index i = 0; i < mu.size(); ++i) {
        const double z = (x[static_cast<std::size_t>(i)] - mu[i]) / sd[i];
        total += -0.5 * z * z - std::log(sd[i] * std::sqrt(2.0 * std::numbers::pi));
    }
    return total;
}

TorusSimulator::TorusSimulator(double a, double b, Vector noise_std) : a_(a), b_(b), noise_std_(std::move(noise_std)) {
    if (noise_std_.size() != 3 || (noise_std_.array() <= 0.0).any()) {
        throw PreconditionError("torus needs three positive noise scales");
    }
}

Vector TorusSimulator::mean(std::span<const double> theta) const {
    check_theta(theta, 3);
    const double d0 = theta[0] - a_;
    const double d1 = theta[1] - b_;
    return Vector{{theta[0], std::sqrt(d0 * d0 + d1 * d1), theta[2]}};
}

nlohmann::json TorusSimulator::params() const {
    return {{"a", a_}, {"b", b_}, {"noise_std", {noise_std_[0], noise_std_[1], noise_std_[2]}}};
}

EggboxSimulator::EggboxSimulator(std::size_t dims, double sigma)
    : dims_(dims), sigma_(sigma), noise_std_(Vector::Constant(static_cast<Eigen::Index>(dims), sigma)) {
    if (dims_ == 0 || !(sigma_ > 0.0)) throw PreconditionError("eggbox needs dims >= 1 and sigma > 0");
}

Vector EggboxSimulator::mean(std::span<const double> theta) const {
    check_theta(theta, dims_);
    return (as_vector(theta).array() * std::numbers::pi).sin().matrix();
}

nlohmann::json EggboxSimulator::params() const { return {{"dims", dims_}, {"sigma", sigma_}}; }

RotatedEggboxSimulator::RotatedEggboxSimulator(std::size_t dims, double sigma)
    : RotatedEggboxSimulator(rotation_matrix(dims), sigma) {}

RotatedEggboxSimulator::RotatedEggboxSimulator(Matrix rotation, double sigma)
    : inner_(static_cast<std::size_t>(rotation.rows()), sigma), rotation_(std::move(rotation)) {
    if (rotation_.rows() != rotation_.cols()) throw PreconditionError("rotation must be square");
}

Vector RotatedEggboxSimulator::unrotate(std::span<const double> theta) const {
    check_theta(theta, param_dim());
    return rotation_.transpose() * as_vector(theta);
}

Vector RotatedEggboxSimulator::mean(std::span<const double> theta) const {
    const Vector t = unrotate(theta);
    return inner_.mean({t.data(), static_cast<std::size_t>(t.size())});
}

Vector RotatedEggboxSimulator::simulate(std::span<const double> theta, Rng& rng) const {
    const Vector t = unrotate(theta);
    return inner_.simulate({t.data(), static_cast<std::size_t>(t.size())}, rng);
}

FactorizablePrior RotatedEggboxSimulator::default_prior() const { return bounding_prior(rotation_); }

std::vector<double> RotatedEggboxSimulator::default_theta_o() const {
    const auto base = inner_.default_theta_o();
    const Vector rotated = rotation_ * as_vector(base);
    return {rotated.data(), rotated.data() + rotated.size()};
}

nlohmann::json RotatedEggboxSimulator::params() const { return {{"dims", param_dim()}, {"sigma", inner_.sigma()}}; }

GaussianDiagSimulator::GaussianDiagSimulator(std::size_t dims, double sigma)
    : dims_(dims), sigma_(sigma), noise_std_(Vector::Constant(static_cast<Eigen::Index>(dims), sigma)) {
    if (dims_ == 0 || !(sigma_ > 0.0)) throw PreconditionError("gaussian_diag needs dims >= 1 and sigma > 0");
}

Vector GaussianDiagSimulator::mean(std::span<const double> theta) const {
    check_theta(theta, dims_);
    return as_vector(theta);
}

std::vector<double> GaussianDiagSimulator::default_theta_o() const {
    // Spread over [0.3, 0.7] so every dimension keeps at least one side
    // of its +/-5 sigma interval inside the unit interval.
    std::vector<double> out(dims_, 0.5);
    if (dims_ > 1) {
        for (std::size_t d = 0; d < dims_; ++d) out[d] = 0.3 + 0.4 * static_cast<double>(d) / static_cast<double>(dims_ - 1);
    }
    return out;
}

nlohmann::json GaussianDiagSimulator::params() const { return {{"dims", dims_}, {"sigma", sigma_}}; }

NoiseSimulator::NoiseSimulator(std::size_t param_dim, std::size_t data_dim) : param_dim_(param_dim), data_dim_(data_dim) {
    if (param_dim_ == 0 || data_dim_ == 0) throw PreconditionError("noise simulator needs non-zero dimensions");
}

Vector NoiseSimulator::simulate(std::span<const double> theta, Rng& rng) const {
    check_theta(theta, param_dim_);
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector x(static_cast<Eigen::Index>(data_dim_));
    for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = normal(rng);
    return x;
}

std::optional<double> NoiseSimulator::log_likelihood(std::span<const double> x, std::span<const double>) const {
    double total = 0.0;
    for (double v : x) total += -0.5 * v * v - 0.5 * std::log(2.0 * std::numbers::pi);
    return total;
}

nlohmann::json NoiseSimulator::params() const { return {{"param_dim", param_dim_}, {"data_dim", data_dim_}}; }

std::unique_ptr<Simulator> make_simulator(const std::string& name, const nlohmann::json& params) {
    const nlohmann::json p = params.is_null() ? nlohmann::json::object() : params;
    if (name == "torus") {
        Vector sd{{0.03, 0.005, 0.2}};
        if (p.contains("noise_std")) {
            const auto v = p.at("noise_std").get<std::vector<double>>();
            if (v.size() != 3) throw PreconditionError("torus noise_std needs three entries");
            sd = Vector{{v[0], v[1], v[2]}};
        }
        return std::make_unique<TorusSimulator>(p.value("a", 0.6), p.value("b", 0.8), sd);
    }
    if (name == "eggbox") return std::make_unique<EggboxSimulator>(p.value("dims", std::size_t{10}), p.value("sigma", 0.1));
    if (name == "rotated_eggbox") {
        return std::make_unique<RotatedEggboxSimulator>(p.value("dims", std::size_t{10}), p.value("sigma", 0.1));
    }
    if (name == "gaussian_diag") {
        return std::make_unique<GaussianDiagSimulator>(p.value("dims", std::size_t{3}), p.value("sigma", 0.1));
    }
    if (name == "noise") {
        return std::make_unique<NoiseSimulator>(p.value("param_dim", std::size_t{2}), p.value("data_dim", std::size_t{2}));
    }
    throw PreconditionError("unknown simulator '" + name + "'");
}

Matrix simulate_batch(const Simulator& sim, const Matrix& thetas, Rng& rng, std::size_t workers) {
    if (static_cast<std::size_t>(thetas.cols()) != sim.param_dim()) {
        throw PreconditionError("theta batch has the wrong number of columns");
    }
    const std::uint64_t base = rng();
    const auto n = static_cast<std::size_t>(thetas.rows());
    Matrix xs(thetas.rows(), static_cast<Eigen::Index>(sim.data_dim()));
    parallel_for(n, workers, [&](std::size_t i) {
        const auto row = static_cast<Eigen::Index>(i);
        const Vector theta = thetas.row(row).transpose();
        Rng item_rng = make_rng(base, {i});
        try {
            const Vector x = sim.simulate({theta.data(), static_cast<std::size_t>(theta.size())}, item_rng);
            if (x.size() != xs.cols()) throw RuntimeFailure("simulator returned the wrong data dimension");
            xs.row(row) = x.transpose();
        } catch (const std::exception& e) {
            throw RuntimeFailure("simulation failed at index " + std::to_string(i) + ": " + e.what());
        }
    });
    return xs;
}

std::size_t poisson_count(std::size_t requested, Rng& rng) {
    if (requested == 0) return 0;
    std::poisson_distribution<std::size_t> dist(static_cast<double>(requested));
    return dist(rng);
}

Matrix rotation_matrix(std::size_t dims) {
    if (dims < 2) throw PreconditionError("rotation_matrix requires D >= 2");
    const auto n = static_cast<Eigen::Index>(dims);
    const Vector u = Vector::Constant(n, 1.0 / std::sqrt(static_cast<double>(dims)));
    Vector e = Vector::Zero(n);
    e[n - 1] = 1.0;
    const double c = u.dot(e);
    const double s = std::sqrt(1.0 - c * c);
    const Vector b = (e - c * u).normalized();
    Matrix q = Matrix::Identity(n, n);
    q += (c - 1.0) * (u * u.transpose() + b * b.transpose());
    q += s * (b * u.transpose() - u * b.transpose());
    return q;
}

FactorizablePrior bounding_prior(const Matrix& rotation) {
    const auto dims = static_cast<std::size_t>(rotation.rows());
    if (rotation.cols() != rotation.rows() || dims == 0) throw PreconditionError("rotation must be square");
    std::vector<PriorComponent> components;
    components.reserve(dims);
    if (dims <= 20) {
        Vector lo = Vector::Constant(rotation.rows(), std::numeric_limits<double>::infinity());
        Vector hi = -lo;
        Vector corner(rotation.cols());
        for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << dims); ++mask) {
            for (std::size_t k = 0; k < dims; ++k) corner[static_cast<Eigen::Index>(k)] = (mask >> k) & 1U ? 1.0 : 0.0;
            const Vector image = rotation * corner;
            lo = lo.cwiseMin(image);
            hi = hi.cwiseMax(image);
        }
        for (std::size_t d = 0; d < dims; ++d) {
            components.push_back(PriorComponent::uniform(lo[static_cast<Eigen::Index>(d)], hi[static_cast<Eigen::Index>(d)]));
        }
    } else {
        for (Eigen::Index d = 0; d < rotation.rows(); ++d) {
            const double lo = rotation.row(d).cwiseMin(0.0).sum();
            const double hi = rotation.row(d).cwiseMax(0.0).sum();
            components.push_back(PriorComponent::uniform(lo, hi));
        }
    }
    return FactorizablePrior(std::move(components));
}

}  // namespace tmnre
