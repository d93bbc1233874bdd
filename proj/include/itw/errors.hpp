#pragma once

#include <stdexcept>
#include <string>

namespace itw {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed input files, graph/trajectory invariant violations, bad arguments.
struct ValidationError : Error {
    using Error::Error;
};

// A perturbation whose constraints cannot be met on the given input.
struct UnsatisfiableError : Error {
    using Error::Error;
};

// Non-finite losses, degenerate normalizations and the like.
struct NumericError : Error {
    using Error::Error;
};

}  // namespace itw
