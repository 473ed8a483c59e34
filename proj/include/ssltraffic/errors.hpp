#pragma once

#include <stdexcept>
#include <string>

namespace ssltraffic {

/// Base of every error raised by the library. `exit_code()` is the process
/// exit status the CLI maps the error to.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    virtual int exit_code() const noexcept { return 1; }
};

/// Bad or inconsistent configuration (unknown keys, invalid ranges, K mismatch).
class ConfigError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 2; }
};

/// Malformed or unusable input data (bad pcap magic, CSV arity, empty sets).
class DataError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 3; }
};

/// Shape mismatch between matrices, models or datasets.
class DimensionError : public DataError {
public:
    using DataError::DataError;
};

/// Non-finite values or other numeric breakdown.
class NumericError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 4; }
};

/// Object used out of order (e.g. backward with a stale forward cache).
class StateError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 1; }
};

}  // namespace ssltraffic
