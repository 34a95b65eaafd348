#pragma once

#include <stdexcept>
#include <string>

namespace v2sim {

// Argument outside the mathematical domain of an operation (T <= 0, site outside mesh, ...).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

// Iterative method failed to converge; carries the last residual.
class NumericalError : public std::runtime_error {
public:
    NumericalError(const std::string& what, double last_residual = 0.0)
        : std::runtime_error(what), last_residual_(last_residual) {}

    double last_residual() const noexcept { return last_residual_; }

private:
    double last_residual_;
};

// Malformed or inconsistent configuration. `path` names the offending field.
class ValidationError : public std::runtime_error {
public:
    ValidationError(std::string path, const std::string& what)
        : std::runtime_error(path.empty() ? what : path + ": " + what), path_(std::move(path)) {}

    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

class UnknownCommandError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace v2sim
