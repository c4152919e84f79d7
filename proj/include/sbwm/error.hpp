#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace sbwm {

/// Coarse failure classes. The CLI maps these onto exit codes and the
/// one-line `error category=...` diagnostic.
enum class ErrorCategory {
    bad_input,
    not_found,
    io,
    numerical,
    internal,
};

std::string_view to_string(ErrorCategory category);

class Error : public std::runtime_error {
public:
    Error(ErrorCategory category, const std::string& message)
        : std::runtime_error(message), category_(category)
    {
    }

    ErrorCategory category() const noexcept { return category_; }

private:
    ErrorCategory category_;
};

inline Error bad_input(const std::string& message)
{
    return Error(ErrorCategory::bad_input, message);
}

inline Error not_found(const std::string& message)
{
    return Error(ErrorCategory::not_found, message);
}

inline Error io_error(const std::string& message)
{
    return Error(ErrorCategory::io, message);
}

inline Error numerical_error(const std::string& message)
{
    return Error(ErrorCategory::numerical, message);
}

} // namespace sbwm
