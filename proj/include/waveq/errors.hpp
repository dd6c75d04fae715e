#pragma once

#include <stdexcept>
#include <string>

namespace waveq {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Shape or extent mismatch between operands.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Argument outside the mathematical domain of an operation (e.g. beta < 1).
class DomainError : public Error {
public:
    using Error::Error;
};

/// Invalid run, schedule, or regularizer configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Caller-supplied data is inconsistent (bad target index, count mismatch).
class InputError : public Error {
public:
    using Error::Error;
};

/// Non-finite or divergent numerics.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Malformed on-disk data (IDX, checkpoint, CSV).
class FormatError : public Error {
public:
    using Error::Error;
};

/// Filesystem failure; the message carries the path.
class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace waveq
