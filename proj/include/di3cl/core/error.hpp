#pragma once

#include <stdexcept>
#include <string>

namespace di3cl {

/// Broad failure classes. The CLI maps each to a distinct exit code.
enum class ErrorKind {
    config,      // invalid configuration value or unknown key
    data,        // missing/empty/corrupt dataset
    divergence,  // NaN or Inf in a loss
    io,          // file system or raster codec failure
    geometry,    // box/crop outside valid bounds
    shape,       // tensor shape mismatch
    state,       // operation called in the wrong state (e.g. empty memory bank)
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& w) : Error(ErrorKind::config, w) {}
};
struct DataError : Error {
    explicit DataError(const std::string& w) : Error(ErrorKind::data, w) {}
};
struct DivergenceError : Error {
    explicit DivergenceError(const std::string& w) : Error(ErrorKind::divergence, w) {}
};
struct IoError : Error {
    explicit IoError(const std::string& w) : Error(ErrorKind::io, w) {}
};
struct GeometryError : Error {
    explicit GeometryError(const std::string& w) : Error(ErrorKind::geometry, w) {}
};
struct ShapeError : Error {
    explicit ShapeError(const std::string& w) : Error(ErrorKind::shape, w) {}
};
struct StateError : Error {
    explicit StateError(const std::string& w) : Error(ErrorKind::state, w) {}
};

/// Throws an error of the same concrete type as `kind` with a new message.
[[noreturn]] inline void throw_error(ErrorKind kind, const std::string& what) {
    switch (kind) {
        case ErrorKind::config: throw ConfigError(what);
        case ErrorKind::data: throw DataError(what);
        case ErrorKind::divergence: throw DivergenceError(what);
        case ErrorKind::io: throw IoError(what);
        case ErrorKind::geometry: throw GeometryError(what);
        case ErrorKind::shape: throw ShapeError(what);
        case ErrorKind::state: throw StateError(what);
    }
    throw Error(kind, what);
}

}  // namespace di3cl
