#pragma once

#include <stdexcept>
#include <string>

namespace bca {

/// Base of all errors raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Unreadable, missing or unwritable file.
class IoError : public Error {
public:
    using Error::Error;
};

/// Malformed input at a known line of a text file.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line)
        : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class FormatError : public Error {
public:
    using Error::Error;
};

class NonFiniteError : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

/// Caller violated a documented precondition.
class PreconditionError : public Error {
public:
    using Error::Error;
};

class ConfigMismatchError : public Error {
public:
    using Error::Error;
};

class ChecksumError : public Error {
public:
    using Error::Error;
};

}  // namespace bca
