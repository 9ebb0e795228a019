#pragma once

#include <stdexcept>
#include <string>

namespace kdal {

// Error categories map one-to-one onto CLI exit codes.
enum class ErrorKind {
    invalid_input,  // bad arguments or malformed data
    config,         // exit 2
    provider,       // exit 3
    state,          // exit 4
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

class InvalidInput : public Error {
public:
    explicit InvalidInput(const std::string& what) : Error(ErrorKind::invalid_input, what) {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error(ErrorKind::config, what) {}
};

class ProviderError : public Error {
public:
    explicit ProviderError(const std::string& what) : Error(ErrorKind::provider, what) {}
};

class StateError : public Error {
public:
    explicit StateError(const std::string& what) : Error(ErrorKind::state, what) {}
};

inline int exit_code(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::config: return 2;
        case ErrorKind::provider: return 3;
        case ErrorKind::state: return 4;
        case ErrorKind::invalid_input: return 1;
    }
    return 1;
}

}  // namespace kdal
