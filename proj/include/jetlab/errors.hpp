#pragma once

#include <stdexcept>
#include <string>

namespace jetlab {

/// Bad configuration values (nonpositive widths, empty seed lists, ...).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Malformed or unusable input data (parse failures, missing files).
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Inputs outside an operation's mathematical domain (pT <= 0, single-class AUC, ...).
struct DomainError : std::runtime_error {
    explicit DomainError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Non-finite value detected during evaluation; message names the graph node.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Caller broke an API contract (mismatched lengths, incompatible layouts).
struct ContractError : std::logic_error {
    explicit ContractError(const std::string& msg) : std::logic_error(msg) {}
};

} // namespace jetlab
