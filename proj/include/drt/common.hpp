#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>

namespace drt {

// Thrown when a caller breaks a documented precondition (shapes, ranges,
// weight sums). Distinct from ConfigError so the CLI can map them to the
// right exit codes.
struct ContractViolation : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

inline void format_into(std::ostringstream&) {}

template <typename A, typename... Rest>
void format_into(std::ostringstream& os, const A& a, const Rest&... rest) {
    os << a;
    format_into(os, rest...);
}

template <typename... Args>
std::string strcat(const Args&... args) {
    std::ostringstream os;
    format_into(os, args...);
    return os.str();
}

}  // namespace detail

}  // namespace drt

#define DRT_CHECK(cond, ...)                                                       \
    do {                                                                           \
        if (!(cond)) {                                                             \
            throw ::drt::ContractViolation(                                        \
                ::drt::detail::strcat("check failed: ", #cond, ": ", __VA_ARGS__)); \
        }                                                                          \
    } while (0)

#define DRT_CONFIG_CHECK(cond, ...)                                                \
    do {                                                                           \
        if (!(cond)) {                                                             \
            throw ::drt::ConfigError(::drt::detail::strcat(__VA_ARGS__));          \
        }                                                                          \
    } while (0)
