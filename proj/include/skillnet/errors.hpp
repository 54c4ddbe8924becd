#pragma once

#include <stdexcept>
#include <string>

namespace skillnet {

// All library failures derive from Error so callers can catch one type.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ShapeError : Error {
    using Error::Error;
};

struct DomainError : Error {
    using Error::Error;
};

// Violated precondition on a call (wrong rank of loss, k out of range, ...).
struct ContractError : Error {
    using Error::Error;
};

struct StateError : Error {
    using Error::Error;
};

struct LookupError : Error {
    using Error::Error;
};

struct DegenerateError : Error {
    using Error::Error;
};

struct GenerationError : Error {
    using Error::Error;
};

// Raised by the training loop on a non-finite loss.
struct TrainingError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    ConfigError(std::string key, const std::string& what)
        : Error("config error on '" + key + "': " + what), key_(std::move(key)) {}

    const std::string& key() const noexcept { return key_; }

  private:
    std::string key_;
};

}  // namespace skillnet
