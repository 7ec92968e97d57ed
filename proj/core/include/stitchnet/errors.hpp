#pragma once

#include <stdexcept>
#include <string>

namespace stitchnet {

// Base of every error raised by the library. The CLI maps subclasses onto
// exit codes: UsageError -> 1, DataError -> 2, NumericError -> 3.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class UsageError : public Error {
public:
    using Error::Error;
};

// Malformed files, shape disagreements, violated preconditions on data.
class DataError : public Error {
public:
    using Error::Error;
};

// Non-finite losses or gradients, degenerate statistics.
class NumericError : public Error {
public:
    using Error::Error;
};

} // namespace stitchnet
