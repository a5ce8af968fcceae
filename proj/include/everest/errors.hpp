#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace everest {

// Base for every error raised by the engine.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed or truncated binary file. offset() is the byte position where
// decoding failed.
class FormatError : public Error {
public:
    FormatError(const std::string& what, std::size_t offset)
        : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}

    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

class IoError : public Error {
public:
    using Error::Error;
};

// Invalid index/storage configuration (non power-of-two partition count,
// budget too small, ...).
class ConfigError : public Error {
public:
    using Error::Error;
};

class LayerOutOfRange : public Error {
public:
    using Error::Error;
};

class IndexOutOfRange : public Error {
public:
    using Error::Error;
};

class InvalidQuery : public Error {
public:
    using Error::Error;
};

// A caller broke a documented precondition.
class ContractViolation : public Error {
public:
    using Error::Error;
};

} // namespace everest
