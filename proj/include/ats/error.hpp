#pragma once

#include <stdexcept>
#include <string>

namespace ats {

// Bad input, bad configuration or violated precondition on user data.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Singular or indefinite matrices, non-convergence.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int config = 2;
inline constexpr int numerical = 3;
inline constexpr int internal = 4;
}  // namespace exit_code

}  // namespace ats
