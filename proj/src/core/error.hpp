#pragma once

#include <stdexcept>
#include <string>

namespace adasmtl {

enum class ErrorKind {
    contract,      // precondition violated by the caller
    config,        // invalid configuration value
    io,            // file missing, unreadable, malformed container
    schema,        // missing/unknown column or field
    parse,         // value could not be parsed
    validation,    // value parsed but outside its domain
    eligibility,   // subject lacks a required visit or volume
    registration,  // registration failed to find overlap
    numeric,       // NaN/Inf in loss or parameters
    undefined,     // mathematically undefined result (e.g. zero-variance correlation)
    busy,          // output directory locked by another run
    unsupported,   // input shape or format outside what is supported
};

const char* to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

inline void require(bool condition, const std::string& message) {
    if (!condition) fail(ErrorKind::contract, message);
}

}  // namespace adasmtl
