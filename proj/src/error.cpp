#include "ctxmix/error.hpp"

namespace ctxmix {

const char* to_string(ErrorKind kind)
{
    switch (kind) {
    case ErrorKind::Dimension: return "dimension error";
    case ErrorKind::Numeric: return "numeric error";
    case ErrorKind::Input: return "input error";
    case ErrorKind::Range: return "range error";
    case ErrorKind::Usage: return "usage error";
    case ErrorKind::Validation: return "validation error";
    case ErrorKind::Data: return "data error";
    case ErrorKind::Stratification: return "stratification error";
    case ErrorKind::Io: return "i/o error";
    }
    return "error";
}

Error::Error(ErrorKind kind, const std::string& message)
    : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind)
{
}

void fail(ErrorKind kind, const std::string& message)
{
    throw Error(kind, message);
}

} // namespace ctxmix
