#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace modupdate {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent user input (configuration, arguments).
class InvalidArgument : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

/// A file could not be opened or read.
class IoError : public Error {
public:
    IoError(std::string file, const std::string& what)
        : Error(file + ": " + what), file_(std::move(file)) {}
    const std::string& file() const noexcept { return file_; }

private:
    std::string file_;
};

/// A file was readable but its content violates the expected format.
class FormatError : public IoError {
public:
    using IoError::IoError;
};

/// Matrix dimensions disagree across components or files.
class DimensionError : public IoError {
public:
    using IoError::IoError;
};

/// A component matrix is not symmetric within tolerance.
class SymmetryError : public IoError {
public:
    using IoError::IoError;
};

/// K(x) or M(x) is not positive definite at the requested parameter point.
class InfeasibleError : public Error {
public:
    using Error::Error;
};

/// An iterative method stopped without meeting its tolerance.
class ConvergenceError : public Error {
public:
    ConvergenceError(const std::string& what, std::vector<double> best_residuals = {})
        : Error(what), residuals_(std::move(best_residuals)) {}
    const std::vector<double>& best_residuals() const noexcept { return residuals_; }

private:
    std::vector<double> residuals_;
};

}  // namespace modupdate
