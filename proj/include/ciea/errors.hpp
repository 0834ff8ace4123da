#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ciea {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A caller violated a documented precondition.
class ContractError : public Error {
public:
    using Error::Error;
};

/// Tensor shapes do not agree for the requested operation.
class DimensionError : public ContractError {
public:
    using ContractError::ContractError;
};

/// NaN or otherwise unusable floating point input.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Operation not allowed in the current object state (e.g. a second backward pass).
class StateError : public Error {
public:
    using Error::Error;
};

/// Cross-record consistency failure: duplicate IDs, dangling references.
class ReferentialError : public Error {
public:
    using Error::Error;
};

/// Malformed file content. Carries the 1-based line number when known.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line)
        : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// File system failure: missing input, unwritable output.
class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace ciea
