#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace cue {

/// Base class for every error the engine reports.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or corrupt file content. `offset()` is the byte position the
/// decoder was looking at when it gave up.
class FormatError : public Error {
public:
    FormatError(const std::string& detail, std::uint64_t offset)
        : Error(detail + " at offset " + std::to_string(offset)), detail_(detail), offset_(offset) {}

    const std::string& detail() const noexcept { return detail_; }
    std::uint64_t offset() const noexcept { return offset_; }

private:
    std::string detail_;
    std::uint64_t offset_;
};

/// A value violates a documented invariant (dimension mismatch, bad config...).
class ValidationError : public Error {
public:
    using Error::Error;
};

/// A vector whose norm is too small to normalize.
class DegenerateError : public Error {
public:
    using Error::Error;
};

/// File system failure (missing input, unwritable output).
class IoError : public Error {
public:
    using Error::Error;
};

} // namespace cue
