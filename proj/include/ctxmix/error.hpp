#pragma once

#include <stdexcept>
#include <string>

namespace ctxmix {

enum class ErrorKind {
    Dimension,
    Numeric,
    Input,
    Range,
    Usage,
    Validation,
    Data,
    Stratification,
    Io,
};

const char* to_string(ErrorKind kind);

// Single exception type for the engine; callers switch on kind() when they
// need to map failures onto exit codes.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message);

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& message);

inline void check(bool condition, ErrorKind kind, const std::string& message)
{
    if (!condition) fail(kind, message);
}

} // namespace ctxmix
