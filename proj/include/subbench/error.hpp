#pragma once

#include <stdexcept>
#include <string>

namespace subbench {

// Base of every exception thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Invalid experiment or model configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Input data violates a documented precondition.
class DataError : public Error {
public:
    using Error::Error;
};

// A synthetic training record was produced by a generator that saw test data.
class LeakageError : public Error {
public:
    using Error::Error;
};

// Training produced a non-finite loss.
class DivergenceError : public Error {
public:
    using Error::Error;
};

}  // namespace subbench
