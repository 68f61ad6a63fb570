#pragma once

#include <stdexcept>
#include <string>

namespace cdsr {

/// Thrown when an operation receives arguments violating its preconditions.
class ParameterError : public std::invalid_argument {
public:
    explicit ParameterError(const std::string& msg) : std::invalid_argument(msg) {}
};

/// Thrown when an operation is invoked on an object in an unusable state
/// (e.g. sampling negatives from an empty queue).
class StateError : public std::logic_error {
public:
    explicit StateError(const std::string& msg) : std::logic_error(msg) {}
};

#define CDSR_REQUIRE(cond, msg)                    \
    do {                                           \
        if (!(cond)) throw ::cdsr::ParameterError(msg); \
    } while (0)

#define CDSR_REQUIRE_STATE(cond, msg)              \
    do {                                           \
        if (!(cond)) throw ::cdsr::StateError(msg);     \
    } while (0)

}  // namespace cdsr
