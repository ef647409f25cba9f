#pragma once

#include <stdexcept>
#include <string>

namespace da4lg {

struct LoadError : std::runtime_error {
    explicit LoadError(const std::string& msg) : std::runtime_error("load error: " + msg) {}
};

struct SchemaError : std::runtime_error {
    explicit SchemaError(const std::string& msg) : std::runtime_error("schema error: " + msg) {}
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error("config error: " + msg) {}
};

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error("shape error: " + msg) {}
};

struct ArgumentError : std::runtime_error {
    explicit ArgumentError(const std::string& msg) : std::runtime_error("argument error: " + msg) {}
};

struct StateError : std::runtime_error {
    explicit StateError(const std::string& msg) : std::runtime_error("state error: " + msg) {}
};

// Degenerate numeric input, e.g. cosine of a zero-norm vector.
struct NumericDomainError : std::runtime_error {
    explicit NumericDomainError(const std::string& msg) : std::runtime_error("numeric domain error: " + msg) {}
};

struct TrainingDiverged : std::runtime_error {
    explicit TrainingDiverged(const std::string& msg) : std::runtime_error("training diverged: " + msg) {}
};

}  // namespace da4lg
