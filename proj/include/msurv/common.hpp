#pragma once

#include <stdexcept>
#include <string>

namespace msurv {

/// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Invalid configuration (bad hyperparameter, infeasible generator spec, ...).
struct ConfigError : Error {
    using Error::Error;
};

/// Malformed input file; message carries row/column context where known.
struct ParseError : Error {
    using Error::Error;
};

/// A documented precondition was violated by the caller.
struct ContractError : Error {
    using Error::Error;
};

/// A metric is undefined on the given data (no comparable pairs, degenerate
/// censoring weights, ...).
struct MetricError : Error {
    using Error::Error;
};

}  // namespace msurv
