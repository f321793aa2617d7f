#pragma once

#include <stdexcept>
#include <string>

namespace gramreg {

/// Base class for all library errors.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Tensor extents do not line up (matmul inner dims, elementwise shapes, ...).
struct DimensionError : Error {
    using Error::Error;
};

/// A value is outside the operation's domain (empty reduction, bad label, V=0).
struct DomainError : Error {
    using Error::Error;
};

/// A file does not match its declared format (manifest, PGM, checkpoint).
struct FormatError : Error {
    using Error::Error;
};

/// Inconsistent run configuration (architecture mismatch, bad config key).
struct ConfigError : Error {
    using Error::Error;
};

/// Optimization failure at runtime (NaN loss, non-finite gradient).
struct TrainingError : Error {
    using Error::Error;
};

/// An operation was called out of order (backward before forward).
struct StateError : Error {
    using Error::Error;
};

/// Filesystem failure (unwritable output path, unreadable input).
struct IoError : Error {
    using Error::Error;
};

}  // namespace gramreg
