#pragma once

#include <stdexcept>
#include <string>

namespace camp {

// Base for every error the library raises. The category is stable and is
// what the CLI prints in front of the message.
class Error : public std::runtime_error {
public:
    Error(std::string category, const std::string& what)
        : std::runtime_error(what), category_(std::move(category)) {}

    const std::string& category() const noexcept { return category_; }

private:
    std::string category_;
};

class DimensionError : public Error {
public:
    explicit DimensionError(const std::string& what) : Error("dimension", what) {}
};

class DomainError : public Error {
public:
    explicit DomainError(const std::string& what) : Error("domain", what) {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error("config", what) {}
};

class TapeError : public Error {
public:
    explicit TapeError(const std::string& what) : Error("tape", what) {}
};

class OptimizerError : public Error {
public:
    explicit OptimizerError(const std::string& what) : Error("optimizer", what) {}
};

enum class FormatErrorKind {
    bad_magic,
    version_mismatch,
    truncated,
    non_finite,
    malformed,
    shape_mismatch,
    io,
};

const char* to_string(FormatErrorKind kind) noexcept;

class FormatError : public Error {
public:
    FormatError(FormatErrorKind kind, const std::string& what)
        : Error(std::string("format/") + to_string(kind), what), kind_(kind) {}

    FormatErrorKind kind() const noexcept { return kind_; }

private:
    FormatErrorKind kind_;
};

}  // namespace camp
