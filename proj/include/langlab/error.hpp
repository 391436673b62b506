#pragma once

#include <stdexcept>
#include <string>

namespace langlab {

// Error taxonomy used across the library. CLI maps ConfigError/usage to
// exit code 2 and everything else to exit code 1.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid configuration values (bad dims, malformed settings).
struct ConfigError : Error {
    using Error::Error;
};

// Violated call contract (bad shapes, out-of-range ids, invalid phase).
struct ContractError : Error {
    using Error::Error;
};

// Non-finite values where finite ones are required.
struct NumericError : Error {
    using Error::Error;
};

// Problems with user-supplied data (empty corpus, bad TSV row).
struct DataError : Error {
    using Error::Error;
};

// Malformed serialized artifacts (checkpoints, vocab files).
struct FormatError : Error {
    using Error::Error;
};

}  // namespace langlab
