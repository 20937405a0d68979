#pragma once

#include <stdexcept>
#include <string>

namespace mtda {

// Base for all library errors. Subclasses map onto CLI exit codes:
// config/data/shape/format/contract -> 2, numerical -> 3.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid configuration value (bad dimensions, negative weights, unknown keys).
struct ConfigError : Error {
    using Error::Error;
};

// Tensor or sequence dimensions do not agree.
struct ShapeError : Error {
    using Error::Error;
};

// Malformed or out-of-range input data (labels, lengths, empty sequences).
struct DataError : Error {
    using Error::Error;
};

// Unparseable file contents (bad magic, version, truncation).
struct FormatError : Error {
    using Error::Error;
};

// API misuse: a precondition the caller controls was violated.
struct ContractError : Error {
    using Error::Error;
};

// Non-finite value encountered during optimization.
struct NumericalError : Error {
    NumericalError(const std::string& msg, long long step) : Error(msg), step(step) {}
    long long step = -1;
};

}  // namespace mtda
