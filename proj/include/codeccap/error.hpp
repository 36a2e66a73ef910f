#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace codeccap {

/// Base of every error raised by the library. `exit_code()` is the CLI
/// process status the error maps to (1 input/validation, 2 backend/transport,
/// 3 internal).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    virtual int exit_code() const noexcept { return 3; }
    virtual const char* kind() const noexcept { return "internal"; }
};

class InputError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 1; }
    const char* kind() const noexcept override { return "input"; }
};

class ConfigError : public InputError {
public:
    using InputError::InputError;
    const char* kind() const noexcept override { return "config"; }
};

/// Syntax error while reading structured input. `offset` is a byte offset or
/// a record/line index, depending on the parser.
class ParseError : public InputError {
public:
    ParseError(const std::string& what, std::size_t offset)
        : InputError(what + " (at " + std::to_string(offset) + ")"), offset_(offset) {}
    std::size_t offset() const noexcept { return offset_; }
    const char* kind() const noexcept override { return "parse"; }

private:
    std::size_t offset_;
};

/// A value parsed fine but breaks a documented invariant. `invariant` names it.
class ValidationError : public InputError {
public:
    ValidationError(std::string invariant, const std::string& detail)
        : InputError("invariant violated: " + invariant + (detail.empty() ? "" : ": " + detail)),
          invariant_(std::move(invariant)) {}
    const std::string& invariant() const noexcept { return invariant_; }
    const char* kind() const noexcept override { return "validation"; }

private:
    std::string invariant_;
};

class BackendError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 2; }
    const char* kind() const noexcept override { return "backend"; }
};

class TransportError : public BackendError {
public:
    using BackendError::BackendError;
    const char* kind() const noexcept override { return "transport"; }
};

class FixtureMissingError : public BackendError {
public:
    explicit FixtureMissingError(std::string hash)
        : BackendError("replay fixture missing for request " + hash), hash_(std::move(hash)) {}
    const std::string& hash() const noexcept { return hash_; }
    const char* kind() const noexcept override { return "fixture_missing"; }

private:
    std::string hash_;
};

class StateError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 1; }
    const char* kind() const noexcept override { return "state"; }
};

} // namespace codeccap
