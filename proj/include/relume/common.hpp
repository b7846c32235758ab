#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace relume {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Bad caller input: shape mismatches, out-of-range values, invalid dims.
struct InvalidArgumentError : Error {
    using Error::Error;
};

/// Filesystem and codec failures. Message always carries the path.
struct IoError : Error {
    using Error::Error;
};

/// Dataset or checkpoint contents that cannot be interpreted.
struct LoadError : Error {
    using Error::Error;
};

/// Unusable configuration (missing fields, bad values, empty sets).
struct ConfigError : Error {
    using Error::Error;
};

/// Training abort: a loss went non-finite. `term` names the offender.
struct NonFiniteLossError : Error {
    std::string term;
    NonFiniteLossError(const std::string& term_name, const std::string& msg)
        : Error(msg), term(term_name) {}
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw InvalidArgumentError(msg);
}

} // namespace relume
