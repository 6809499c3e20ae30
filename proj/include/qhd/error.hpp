#pragma once

#include <stdexcept>
#include <string>

namespace qhd {

/// Base of every error thrown by the library. The CLI maps each subclass to
/// a fixed exit code (see pipeline.hpp).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
public:
    using Error::Error;
};

/// Invalid or incomplete configuration / scenario input.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Vacuum noise does not clear the dark noise floor.
class CalibrationError : public Error {
public:
    using Error::Error;
};

/// Symbol clock could not be recovered from a trace.
class ClockRecoveryError : public Error {
public:
    using Error::Error;
};

/// Clock search hit the edge of its parameter range.
class ClockBoundaryError : public ClockRecoveryError {
public:
    using ClockRecoveryError::ClockRecoveryError;
};

/// Nonlinear fit did not converge or is degenerate.
class FitError : public Error {
public:
    using Error::Error;
};

/// Not enough points for a regression.
class InsufficientDataError : public Error {
public:
    using Error::Error;
};

/// Malformed or truncated trace file.
class FormatError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

} // namespace qhd
