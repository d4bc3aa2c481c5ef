#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

#include <Eigen/Core>

namespace tmnre {

using Rng = std::mt19937_64;
using Vector = Eigen::VectorXd;
// Sample sets are stored one sample per row.
using Matrix = Eigen::MatrixXd;

/// splitmix64 finalizer.
std::uint64_t mix64(std::uint64_t value);

/// Derives an independent stream seed from a base seed and a path of
/// integers (round, head index, item index, ...). Pure function of its
/// arguments, so results do not depend on how work is scheduled.
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> path);

inline Rng make_rng(std::uint64_t base, std::initializer_list<std::uint64_t> path) {
    return Rng(derive_seed(base, path));
}

double uniform01(Rng& rng);
double standard_normal(Rng& rng);

}  // namespace tmnre
