#pragma once

#include <stdexcept>
#include <string>

namespace namelink {

// Base class for all library errors. CLI maps these to exit code 1.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed file on disk (bad magic, truncated record, unparsable header).
class FormatError : public Error {
public:
    explicit FormatError(const std::string& msg) : Error("format error: " + msg) {}
};

// A domain invariant does not hold for a value (names the offending id when known).
class ValidationError : public Error {
public:
    explicit ValidationError(const std::string& msg) : Error("validation error: " + msg) {}
};

// Shape or length mismatch between numeric inputs.
class DimensionError : public Error {
public:
    explicit DimensionError(const std::string& msg) : Error("dimension error: " + msg) {}
};

// Input exceeds a configured limit (caption length, box count, crop size).
class SizeError : public Error {
public:
    explicit SizeError(const std::string& msg) : Error("size error: " + msg) {}
};

// Non-finite or degenerate numeric input (zero-norm vector, NaN loss).
class NumericError : public Error {
public:
    explicit NumericError(const std::string& msg) : Error("numeric error: " + msg) {}
};

// Operation called outside its contract (wrong task shape, total = 0).
class UsageError : public Error {
public:
    explicit UsageError(const std::string& msg) : Error("usage error: " + msg) {}
};

// Impossible configuration (empty split, empty required partition).
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error("config error: " + msg) {}
};

// Filesystem failure while reading or writing artifacts.
class IoError : public Error {
public:
    explicit IoError(const std::string& msg) : Error("io error: " + msg) {}
};

}  // namespace namelink
