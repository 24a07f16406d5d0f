#pragma once

#include <stdexcept>
#include <string>

namespace dcedit {

enum class ErrorCode {
    InvalidArgument,
    NotFound,
    TraceMismatch,
    Numeric,
    Singular,
    Io,
    Internal,
};

/// All failures in the core surface as Error; the C API maps codes to
/// dcedit_status and the CLI maps them to exit codes.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

const char* error_code_name(ErrorCode code);

}  // namespace dcedit
