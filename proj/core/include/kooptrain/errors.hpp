#pragma once

#include <stdexcept>
#include <string>

namespace koop {

/// Bad user-facing configuration: shapes, ranges, file schemas, config keys.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Numerical failure at runtime: non-finite values, diverging predictions.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

/// Raised by predict() when a patch drives an entry past the divergence cap.
class DivergenceError : public NumericError {
public:
    DivergenceError(const std::string& what, std::uint64_t step)
        : NumericError(what), step_reached(step) {}
    std::uint64_t step_reached;
};

class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace koop
