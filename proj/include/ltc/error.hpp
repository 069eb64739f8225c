#pragma once

#include <stdexcept>
#include <string>

namespace ltc {

/// Base of every error the toolkit throws. The CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad input: dimension mismatch, malformed config, violated precondition.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// A subgroup the locator needs (G_NW or G_NC) has no samples.
class EmptySubgroupError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

/// Filesystem or stream failure.
class IoError : public Error {
public:
    using Error::Error;
};

/// A store or tensor file that exists but cannot be trusted (size, checksum, dtype).
class CorruptStoreError : public IoError {
public:
    using IoError::IoError;
};

/// NaN/Inf produced during a forward pass or reduction.
class NumericError : public Error {
public:
    using Error::Error;
};

} // namespace ltc
