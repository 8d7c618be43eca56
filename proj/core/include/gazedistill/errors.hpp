#pragma once

#include <stdexcept>
#include <string>

namespace gazedistill {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor or grid shapes disagree.
class StructuralError : public Error {
public:
    using Error::Error;
};

/// A numeric parameter is outside its admissible range.
class ParameterError : public Error {
public:
    using Error::Error;
};

/// An input value (text, mask, record list) is unusable.
class InputError : public Error {
public:
    using Error::Error;
};

/// An object was used before it was ready.
class StateError : public Error {
public:
    using Error::Error;
};

/// Malformed record in a gaze log or other line-oriented input.
class RecordError : public Error {
public:
    RecordError(std::size_t line, const std::string& what)
        : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Configuration key missing, unknown, or holding a bad value.
class ConfigError : public Error {
public:
    ConfigError(std::string key, const std::string& what)
        : Error(key + ": " + what), key_(std::move(key)) {}
    const std::string& key() const noexcept { return key_; }

private:
    std::string key_;
};

/// Checkpoint or metric computation that is not defined for the inputs.
class UndefinedMetricError : public Error {
public:
    using Error::Error;
};

}  // namespace gazedistill
