#pragma once

#include <stdexcept>
#include <string>

namespace finsent {

// Error categories. The CLI maps these onto exit codes:
// config/usage -> 1, data -> 2, checkpoint -> 3.

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Violated call contract: shape mismatch, index out of range, non-scalar loss.
struct ContractError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Task head invoked in the wrong mode (classify on a regressor or vice versa).
struct ModeError : ConfigError {
    using ConfigError::ConfigError;
};

// A tensor operation produced a non-finite value.
struct NumericsError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace finsent
