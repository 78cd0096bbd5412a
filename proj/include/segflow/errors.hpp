#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace segflow {

// Base class for every error raised by the library. Callers that only need
// "something went wrong" can catch this; the CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Argument outside the mathematical domain of an operation (alpha not in
// [0,1], t below t_min, blend weight outside [0,1], ...).
class DomainError : public Error {
public:
    using Error::Error;
};

// Invalid configuration: bad schedule, k too small for the density, unknown
// config key, malformed checkpoint.
class ConfigError : public Error {
public:
    using Error::Error;
};

// The alpha distribution cannot determine both segment endpoints (Delta too small).
class DegenerateDensityError : public Error {
public:
    using Error::Error;
};

// Non-finite velocity or loss. Carries the step at which it happened.
class DivergenceError : public Error {
public:
    DivergenceError(const std::string& what, std::size_t step)
        : Error(what + " (step " + std::to_string(step) + ")"), step_(step) {}

    std::size_t step() const noexcept { return step_; }

private:
    std::size_t step_;
};

class UnreliableEstimateError : public Error {
public:
    using Error::Error;
};

// Mismatched arguments (dimensions, alpha grids).
class ContractError : public Error {
public:
    using Error::Error;
};

// Quadrature or discretization too coarse for the requested accuracy.
class PrecisionError : public Error {
public:
    using Error::Error;
};

}  // namespace segflow
