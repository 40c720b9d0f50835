#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace bdsp {

/// Root of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A precondition on caller-supplied arguments was violated.
class InputError : public Error {
public:
    using Error::Error;
};

/// Malformed external input (CSV, config file, chain export).
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t row, std::size_t column)
        : Error(what + " (row " + std::to_string(row) + ", column " + std::to_string(column) + ")"),
          row_(row),
          column_(column) {}

    explicit ParseError(const std::string& what) : Error(what) {}

    std::size_t row() const noexcept { return row_; }
    std::size_t column() const noexcept { return column_; }

private:
    std::size_t row_ = 0;
    std::size_t column_ = 0;
};

/// Stratified operations need at least two examples of every class.
class StratificationError : public InputError {
public:
    using InputError::InputError;
};

/// Exponential enumeration requested beyond its guard.
class CapacityError : public Error {
public:
    using Error::Error;
};

class NotFoundError : public Error {
public:
    using Error::Error;
};

/// Stored bytes no longer hash to their content address.
class CorruptionError : public Error {
public:
    using Error::Error;
};

/// Validators failed to agree on a strict-majority global model.
class ConsensusError : public Error {
public:
    using Error::Error;
};

class ChainIntegrityError : public Error {
public:
    using Error::Error;
};

}  // namespace bdsp
