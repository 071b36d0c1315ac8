#pragma once

#include <stdexcept>
#include <string>

namespace reflexsplit {

// Error taxonomy mirrored by the CLI exit codes:
// usage errors -> 1, data errors -> 2, numerical failures -> 3.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericalError : std::runtime_error {
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeError : std::invalid_argument {
    explicit ShapeError(const std::string& msg) : std::invalid_argument(msg) {}
};

} // namespace reflexsplit
