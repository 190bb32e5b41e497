#pragma once

#include <stdexcept>
#include <string>

namespace qqm {

/// Invalid sizes, indices or settings supplied by the caller or a config file.
class ConfigError : public std::invalid_argument {
public:
    explicit ConfigError(const std::string& what) : std::invalid_argument(what) {}
};

/// A variable outside the domain on which an encoding or closed form is defined.
class DomainError : public std::domain_error {
public:
    explicit DomainError(const std::string& what) : std::domain_error(what) {}
};

/// Training produced a non-finite value; the message carries the diagnostic.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace qqm
