#pragma once

#include <stdexcept>
#include <string>

namespace seisforge {

// Error hierarchy mirrored by the CLI exit codes:
//   ConfigError (and subclasses) -> 2, GenerationError -> 3,
//   CompatibilityError -> 4, NumericalError -> 5.

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed input file; message carries the offending line number.
struct ParseError : ConfigError {
    using ConfigError::ConfigError;
};

// Well-formed file with unusable content (NaN sample, all-zero record, ...).
struct DataError : ConfigError {
    using ConfigError::ConfigError;
};

struct GenerationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Checkpoint/manifest version or base-hash mismatch.
struct CompatibilityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Solver non-convergence; message carries the iteration count.
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace seisforge
