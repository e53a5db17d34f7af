#pragma once

#include <stdexcept>
#include <string>

namespace ptu {

// Base for every error thrown by this library.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor rank/extent mismatches. Messages name both shapes.
struct ShapeError : Error {
    using Error::Error;
};

// Domain violations: NaN/Inf produced, bad argument ranges, contract breaches.
struct ValueError : Error {
    using Error::Error;
};

// Configuration problems: unknown keys, type mismatches, invalid combinations.
struct ConfigError : Error {
    using Error::Error;
};

// Filesystem / stream failures.
struct IoError : Error {
    using Error::Error;
};

// Checkpoint container problems, split by kind so callers can distinguish them.
struct CheckpointError : Error {
    enum class Kind { format, version, truncation };
    Kind kind;
    CheckpointError(Kind k, const std::string& msg) : Error(msg), kind(k) {}
};

}  // namespace ptu
