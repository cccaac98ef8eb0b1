#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace hsnct {

/// Error classes map onto CLI exit codes: config = 2, data = 3, numerical = 4.
enum class ErrorKind { config, data, numerical };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

/// Invalid parameters or configuration.
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error(ErrorKind::config, what) {}
};

/// Malformed, missing or inconsistent input data.
class DataError : public Error {
public:
    explicit DataError(const std::string& what) : Error(ErrorKind::data, what) {}
};

class ShapeError : public DataError {
public:
    using DataError::DataError;
};

/// Argument outside the domain of a physical relation.
class DomainError : public DataError {
public:
    using DataError::DataError;
};

class FormatError : public DataError {
public:
    FormatError(const std::string& what, std::size_t offset)
        : DataError(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

/// A homogeneous region is too small or empty.
class DegenerateRegionError : public DataError {
public:
    DegenerateRegionError(const std::string& what, std::size_t material)
        : DataError(what), material_(material) {}
    std::size_t material() const noexcept { return material_; }

private:
    std::size_t material_;
};

class NumericalError : public Error {
public:
    explicit NumericalError(const std::string& what) : Error(ErrorKind::numerical, what) {}
};

class ClusteringError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class DecompositionError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

inline int exit_code(ErrorKind kind) noexcept
{
    switch (kind) {
    case ErrorKind::config: return 2;
    case ErrorKind::data: return 3;
    case ErrorKind::numerical: return 4;
    }
    return 1;
}

} // namespace hsnct
