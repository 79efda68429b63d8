#pragma once

#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace tjap {

/// Thrown when an argument lies outside an operation's domain
/// (price outside [0, P̄], negative weight, empty data, ...).
class DomainError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// An iterative solver stopped before meeting its tolerance. The last
/// iterate is kept so callers can decide whether it is usable.
class ConvergenceError : public std::runtime_error {
public:
    ConvergenceError(const std::string& what, Eigen::VectorXd last_iterate)
        : std::runtime_error(what), last_iterate_(std::move(last_iterate)) {}

    const Eigen::VectorXd& last_iterate() const noexcept { return last_iterate_; }

private:
    Eigen::VectorXd last_iterate_;
};

/// Calls arrived out of order (observe for the wrong round, double rollover).
class SequencingError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Invalid run configuration. `line` is 0 when no position is known.
class ConfigError : public std::runtime_error {
public:
    ConfigError(const std::string& what, int line = 0)
        : std::runtime_error(what), line_(line) {}
    int line() const noexcept { return line_; }

private:
    int line_;
};

}  // namespace tjap
