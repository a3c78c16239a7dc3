#pragma once

#include <stdexcept>
#include <string>

namespace procver {

// Bad user-supplied configuration (flags, config files, invalid field values).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed or inconsistent data: manifests, feature files, dataset contracts.
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Filesystem / stream failures.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// NaN/Inf reached a tensor, a gradient, or a loss. Divergence aborts carry this.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Operand shapes not conformable for an op.
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

} // namespace procver
