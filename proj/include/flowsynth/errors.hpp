#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace flowsynth {

// Base class for everything this library throws. The CLI maps each
// subclass to its own exit code.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public Error {
public:
    using Error::Error;
};

// Malformed input data (non-numeric field, bad row).
class ParseError : public Error {
public:
    ParseError(const std::string& msg, std::size_t line)
        : Error(msg + " (line " + std::to_string(line) + ")"), line_(line) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_ = 0;
};

// Structurally wrong input (wrong column count, missing column).
class SchemaError : public ParseError {
public:
    using ParseError::ParseError;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

// Precondition violations: empty inputs, degenerate data, grid mismatch.
class DomainError : public Error {
public:
    using Error::Error;
};

// Numerical failure that should not happen on valid inputs (non-finite
// loss, underflow in the log-space recursions).
class NumericError : public Error {
public:
    using Error::Error;
};

class BundleError : public Error {
public:
    using Error::Error;
};

class BundleVersionError : public BundleError {
public:
    using BundleError::BundleError;
};

class BundleCorruptError : public BundleError {
public:
    using BundleError::BundleError;
};

class BundleInvariantError : public BundleError {
public:
    using BundleError::BundleError;
};

} // namespace flowsynth
