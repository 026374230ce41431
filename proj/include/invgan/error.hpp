#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace invgan {

/// Malformed or truncated file contents. `offset` is the byte position where
/// decoding stopped, or -1 when not applicable.
class FormatError : public std::runtime_error {
public:
    FormatError(const std::string& what, std::int64_t offset = -1)
        : std::runtime_error(offset >= 0 ? what + " (at byte " + std::to_string(offset) + ")" : what),
          offset_(offset) {}
    std::int64_t offset() const noexcept { return offset_; }

private:
    std::int64_t offset_;
};

/// Text input that fails to parse; `line` is 1-based.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, int line)
        : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
    int line() const noexcept { return line_; }

private:
    int line_;
};

/// Data that is well-formed but violates a domain invariant (dims mismatch,
/// NaN in a strict read, out-of-bounds landmark, ...).
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public DataError {
public:
    using DataError::DataError;
};

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Non-finite loss or parameter encountered during optimization.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace invgan
