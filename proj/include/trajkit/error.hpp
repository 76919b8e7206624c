#pragma once

#include <stdexcept>
#include <string>

namespace trajkit {

// Base class for all errors raised by this library. The CLI maps subclasses
// to process exit codes (config -> 2, missing artifact -> 3, numerical -> 4).
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Operand shapes are incompatible (matmul dims, mismatched batches, ...).
struct ShapeError : Error {
    using Error::Error;
};

// A forward/backward pass or a loss produced NaN/Inf.
struct NonFiniteError : Error {
    using Error::Error;
};

// Training loss diverged; message carries the epoch.
struct DivergenceError : Error {
    using Error::Error;
};

// Geometric or algebraic degeneracy (coincident agents, zero-norm projection).
struct DegenerateError : Error {
    using Error::Error;
};

// Malformed input file; message carries the line number.
struct ParseError : Error {
    using Error::Error;
};

// Invalid configuration value or combination.
struct ConfigError : Error {
    using Error::Error;
};

// A required checkpoint/dataset/manifest is absent.
struct MissingArtifactError : Error {
    using Error::Error;
};

// Filesystem failure while reading or writing artifacts.
struct IoError : Error {
    using Error::Error;
};

// Optimizer invoked before gradients were accumulated.
struct MissingGradError : Error {
    using Error::Error;
};

}  // namespace trajkit
