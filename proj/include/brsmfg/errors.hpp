#pragma once

#include <stdexcept>
#include <string>

namespace brsmfg {

/// Invalid parameters or configuration input.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// A solver could not bracket a root or failed to converge.
class SolverError : public std::runtime_error {
public:
    explicit SolverError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Caller broke an interface contract (e.g. field not aligned with grid).
class ContractViolation : public std::logic_error {
public:
    explicit ContractViolation(const std::string& msg) : std::logic_error(msg) {}
};

}  // namespace brsmfg
