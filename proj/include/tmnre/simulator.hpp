#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tmnre/prior.hpp"
#include "tmnre/random.hpp"

namespace tmnre {

/// x = g(theta, z). Implementations are stateless; all randomness comes
/// from the stream passed to simulate().
class Simulator {
public:
    virtual ~Simulator() = default;

    virtual std::string name() const = 0;
    virtual std::size_t param_dim() const = 0;
    virtual std::size_t data_dim() const = 0;

    virtual Vector simulate(std::span<const double> theta, Rng& rng) const = 0;

    /// log p(x | theta) when tractable.
    virtual std::optional<double> log_likelihood(std::span<const double> x, std::span<const double> theta) const;
    bool has_likelihood() const { return likelihood_available(); }

    virtual FactorizablePrior default_prior() const = 0;
    virtual std::vector<double> default_theta_o() const = 0;
    /// Observation without noise, g(theta). Only meaningful for additive
    /// noise simulators.
    virtual Vector noiseless(std::span<const double> theta) const = 0;

    /// Parameters needed to rebuild the simulator through make_simulator.
    virtual nlohmann::json params() const = 0;

protected:
    virtual bool likelihood_available() const { return false; }
};

/// Deterministic mean plus independent Gaussian noise per data channel.
class DiagonalGaussianSimulator : public Simulator {
public:
    Vector simulate(std::span<const double> theta, Rng& rng) const override;
    std::optional<double> log_likelihood(std::span<const double> x, std::span<const double> theta) const override;
    Vector noiseless(std::span<const double> theta) const override { return mean(theta); }

    virtual Vector mean(std::span<const double> theta) const = 0;
    virtual const Vector& noise_std() const = 0;

protected:
    bool likelihood_available() const override { return true; }
};

/// g(theta) = (theta0, sqrt((theta0 - a)^2 + (theta1 - b)^2), theta2).
class TorusSimulator final : public DiagonalGaussianSimulator {
public:
    TorusSimulator(double a = 0.6, double b = 0.8, Vector noise_std = Vector{{0.03, 0.005, 0.2}});

    std::string name() const override { return "torus"; }
    std::size_t param_dim() const override { return 3; }
    std::size_t data_dim() const override { return 3; }
    Vector mean(std::span<const double> theta) const override;
    const Vector& noise_std() const override { return noise_std_; }
    FactorizablePrior default_prior() const override { return FactorizablePrior::unit_cube(3); }
    std::vector<double> default_theta_o() const override { return {0.57, 0.8, 1.0}; }
    nlohmann::json params() const override;

private:
    double a_;
    double b_;
    Vector noise_std_;
};

/// g_k(theta) = sin(pi theta_k).
class EggboxSimulator final : public DiagonalGaussianSimulator {
public:
    explicit EggboxSimulator(std::size_t dims = 10, double sigma = 0.1);

    std::string name() const override { return "eggbox"; }
    std::size_t param_dim() const override { return dims_; }
    std::size_t data_dim() const override { return dims_; }
    Vector mean(std::span<const double> theta) const override;
    const Vector& noise_std() const override { return noise_std_; }
    FactorizablePrior default_prior() const override { return FactorizablePrior::unit_cube(dims_); }
    std::vector<double> default_theta_o() const override { return std::vector<double>(dims_, 0.25); }
    nlohmann::json params() const override;

    double sigma() const { return sigma_; }

private:
    std::size_t dims_;
    double sigma_;
    Vector noise_std_;
};

/// Eggbox evaluated at Q^T theta, with a uniform prior over the bounding
/// box of the rotated unit cube.
class RotatedEggboxSimulator final : public DiagonalGaussianSimulator {
public:
    explicit RotatedEggboxSimulator(std::size_t dims = 10, double sigma = 0.1);
    RotatedEggboxSimulator(Matrix rotation, double sigma);

    std::string name() const override { return "rotated_eggbox"; }
    std::size_t param_dim() const override { return inner_.param_dim(); }
    std::size_t data_dim() const override { return inner_.data_dim(); }
    Vector mean(std::span<const double> theta) const override;
    Vector simulate(std::span<const double> theta, Rng& rng) const override;
    const Vector& noise_std() const override { return inner_.noise_std(); }
    FactorizablePrior default_prior() const override;
    std::vector<double> default_theta_o() const override;
    nlohmann::json params() const override;

    const Matrix& rotation() const { return rotation_; }

private:
    Vector unrotate(std::span<const double> theta) const;

    EggboxSimulator inner_;
    Matrix rotation_;
};

/// x = theta + N(0, sigma^2 I) on the unit cube; 1-d posteriors are
/// truncated normals in closed form.
class GaussianDiagSimulator final : public DiagonalGaussianSimulator {
public:
    explicit GaussianDiagSimulator(std::size_t dims = 3, double sigma = 0.1);

    std::string name() const override { return "gaussian_diag"; }
    std::size_t param_dim() const override { return dims_; }
    std::size_t data_dim() const override { return dims_; }
    Vector mean(std::span<const double> theta) const override;
    const Vector& noise_std() const override { return noise_std_; }
    FactorizablePrior default_prior() const override { return FactorizablePrior::unit_cube(dims_); }
    std::vector<double> default_theta_o() const override;
    nlohmann::json params() const override;

    double sigma() const { return sigma_; }

private:
    std::size_t dims_;
    double sigma_;
    Vector noise_std_;
};

/// Standard normal data independent of theta. Every true ratio is 1.
class NoiseSimulator final : public Simulator {
public:
    NoiseSimulator(std::size_t param_dim = 2, std::size_t data_dim = 2);

    std::string name() const override { return "noise"; }
    std::size_t param_dim() const override { return param_dim_; }
    std::size_t data_dim() const override { return data_dim_; }
    Vector simulate(std::span<const double> theta, Rng& rng) const override;
    std::optional<double> log_likelihood(std::span<const double> x, std::span<const double> theta) const override;
    FactorizablePrior default_prior() const override { return FactorizablePrior::unit_cube(param_dim_); }
    std::vector<double> default_theta_o() const override { return std::vector<double>(param_dim_, 0.5); }
    Vector noiseless(std::span<const double>) const override { return Vector::Zero(static_cast<Eigen::Index>(data_dim_)); }
    nlohmann::json params() const override;

protected:
    bool likelihood_available() const override { return true; }

private:
    std::size_t param_dim_;
    std::size_t data_dim_;
};

/// Builds a simulator by name ("torus" | "eggbox" | "rotated_eggbox" |
/// "gaussian_diag" | "noise") from a params table.
std::unique_ptr<Simulator> make_simulator(const std::string& name, const nlohmann::json& params = nlohmann::json::object());

/// One x per row of `thetas`. Item i draws from the stream
/// derive_seed(base, {i}) where base is drawn once from `rng`, so output
/// does not depend on `workers`.
Matrix simulate_batch(const Simulator& sim, const Matrix& thetas, Rng& rng, std::size_t workers = 1);

/// Poisson(requested) draw; 0 for requested = 0.
std::size_t poisson_count(std::size_t requested, Rng& rng);

/// Proper rotation Q with Q (1,...,1)^T / sqrt(D) = e_D, chosen as the
/// minimal rotation inside the plane spanned by those two vectors.
Matrix rotation_matrix(std::size_t dims);

/// Uniform prior over the bounding box of {Q v : v a corner of [0,1]^D}.
FactorizablePrior bounding_prior(const Matrix& rotation);

}  // namespace tmnre
