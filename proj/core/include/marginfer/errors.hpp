#pragma once

#include <stdexcept>
#include <string>

namespace marginfer {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Bad user-supplied configuration (files, model definitions, CLI flags).
/// CLI exit code 2.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Invalid argument to an in-process API call. CLI exit code 2.
class ArgumentError : public Error {
public:
    using Error::Error;
};

/// Malformed on-disk data. Carries the byte offset where parsing failed.
class FormatError : public Error {
public:
    FormatError(const std::string& msg, std::size_t byte_offset)
        : Error(msg + " (at byte offset " + std::to_string(byte_offset) + ")"),
          byte_offset(byte_offset) {}
    std::size_t byte_offset;
};

/// Numerical failure (non-SPD matrix, singular solve, non-finite value).
/// CLI exit code 4.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Training diverged or produced non-finite loss. CLI exit code 4.
class TrainingError : public Error {
public:
    using Error::Error;
};

/// A diagnostic could not be computed reliably (e.g. chain too short for
/// an autocorrelation estimate). CLI exit code 4.
class DiagnosticError : public Error {
public:
    using Error::Error;
};

/// A validation / cross-validation check failed. CLI exit code 3.
class ValidationError : public Error {
public:
    using Error::Error;
};

}  // namespace marginfer
