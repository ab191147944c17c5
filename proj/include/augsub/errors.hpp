#pragma once

#include <stdexcept>
#include <string>

namespace augsub {

// Runtime failures: I/O, corrupt data, non-finite losses. CLI exit code 1.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Usage and configuration mistakes: bad flags, bad JSON, invalid field
// values, unsupported backend overrides. CLI exit code 2.
struct ConfigError : Error {
  using Error::Error;
};

// Violated API contracts: shape mismatches, out-of-range arguments,
// gradient-connected soft targets. A bug in the caller, not in the data.
struct ContractError : Error {
  using Error::Error;
};

}  // namespace augsub
