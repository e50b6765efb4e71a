#pragma once

#include <stdexcept>
#include <string>

namespace multimix {

// Error families map onto CLI exit codes: config/usage -> 1, data -> 2, numeric -> 3.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape/contract violations inside the engine; treated as config-class failures at the CLI.
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

}  // namespace multimix
