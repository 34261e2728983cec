#pragma once

#include <stdexcept>
#include <string>

namespace etcir {

/// Raised for malformed inputs, invariant violations and I/O failures.
/// The CLI maps it to exit code 2 (data error).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

[[noreturn]] inline void fail(const std::string& what) { throw Error(what); }

inline void require(bool cond, const std::string& what)
{
    if (!cond) fail(what);
}

} // namespace detail
} // namespace etcir
