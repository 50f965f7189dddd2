#pragma once
#include <stdexcept>
#include <string>

namespace nkd {

// All mass on the target class: non-target renormalization is undefined.
struct DegenerateTarget : std::runtime_error {
    explicit DegenerateTarget(const std::string& msg) : std::runtime_error(msg) {}
};

// Caller violated a precondition (bad shapes, backward before forward, ...).
struct UsageError : std::runtime_error {
    explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed on-disk data (IDX / CIFAR / checkpoint).
struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid experiment configuration. CLI exit code 2.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite value where training cannot continue. CLI exit code 3.
struct NumericalError : std::runtime_error {
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace nkd
