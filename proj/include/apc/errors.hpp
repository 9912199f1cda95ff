#pragma once

#include <map>
#include <stdexcept>
#include <string>

namespace apc {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed netlist, arity mismatch, or a non-finite value inside element evaluation.
class StructuralError : public Error {
public:
    using Error::Error;
};

/// An operation was called outside its precondition (e.g. ordering a cyclic graph).
class PreconditionError : public Error {
public:
    using Error::Error;
};

/// A file (netlist, sidecar, machine spec) does not follow its schema.
class FormatError : public Error {
public:
    using Error::Error;
};

class CompileError : public Error {
public:
    using Error::Error;
};

/// A value or gain does not fit the machine interval; the fix is (re)scaling.
class ScalingError : public CompileError {
public:
    using CompileError::CompileError;
};

/// A constant gain of magnitude > 1 was requested from a potentiometer.
class UnscaledCoefficient : public ScalingError {
public:
    UnscaledCoefficient(const std::string& what, double magnitude)
        : ScalingError(what), magnitude_(magnitude) {}
    [[nodiscard]] double magnitude() const noexcept { return magnitude_; }

private:
    double magnitude_;
};

class ModeError : public Error {
public:
    using Error::Error;
};

/// Raised in strict-overload mode the first time any element clamps.
class OverloadError : public Error {
public:
    OverloadError(const std::string& element, double time, double magnitude)
        : Error("overload at element '" + element + "' (|v| = " + std::to_string(magnitude) +
                ", tau = " + std::to_string(time) + ")"),
          element_(element), time_(time), magnitude_(magnitude) {}

    [[nodiscard]] const std::string& element() const noexcept { return element_; }
    [[nodiscard]] double time() const noexcept { return time_; }
    [[nodiscard]] double magnitude() const noexcept { return magnitude_; }

private:
    std::string element_;
    double time_;
    double magnitude_;
};

/// The machine inventory is too small; carries demand minus supply per kind.
class ResourceError : public Error {
public:
    ResourceError(const std::string& what, std::map<std::string, int> deficits)
        : Error(what), deficits_(std::move(deficits)) {}
    [[nodiscard]] const std::map<std::string, int>& deficits() const noexcept { return deficits_; }

private:
    std::map<std::string, int> deficits_;
};

} // namespace apc
