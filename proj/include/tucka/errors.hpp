#pragma once

#include <stdexcept>
#include <string>

namespace tucka {

/// Thrown when operand shapes are incompatible with the requested operation.
class ShapeError : public std::invalid_argument {
public:
    explicit ShapeError(const std::string& what) : std::invalid_argument(what) {}
};

/// Thrown when a configuration violates its invariants (e.g. r > d, alpha <= 0).
class ConfigError : public std::invalid_argument {
public:
    explicit ConfigError(const std::string& what) : std::invalid_argument(what) {}
};

/// Thrown when a contraction pattern is not one of the supported forms.
class UnsupportedContraction : public std::invalid_argument {
public:
    explicit UnsupportedContraction(const std::string& pattern)
        : std::invalid_argument("unsupported contraction pattern: " + pattern) {}
};

/// Thrown on serialization or file-format problems.
class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace tucka
