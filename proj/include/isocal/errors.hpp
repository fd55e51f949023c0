#pragma once

#include <stdexcept>

namespace isocal {

// Bad geometry, shape mismatch, unusable hyperparameters.
struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Corrupt or inconsistent input data (non-finite values, schema mismatch).
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Numerical failure during optimization (divergence, non-finite gradients).
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace isocal
