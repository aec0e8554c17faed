#pragma once

#include <stdexcept>
#include <string>

namespace adaptest {

// Base for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed input: files, configs, out-of-range values, shape mismatches.
class ValidationError : public Error {
public:
    using Error::Error;
};

// A quantity is undefined for the given input (zero variance, constant series).
class UndefinedStatistic : public Error {
public:
    using Error::Error;
};

// Observation has probability zero under the network.
class InconsistentEvidence : public Error {
public:
    using Error::Error;
};

// Training or optimization produced a non-finite value.
class NumericalError : public Error {
public:
    using Error::Error;
};

}  // namespace adaptest
