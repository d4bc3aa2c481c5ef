#pragma once

#include <stdexcept>
#include <string>

namespace tmnre {

/// Violated precondition on an argument (bad sizes, empty inputs, ...).
class PreconditionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Numerical or algorithmic failure discovered while running.
class RuntimeFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace tmnre
