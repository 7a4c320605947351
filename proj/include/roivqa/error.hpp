#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace roivqa {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Carries every problem found while checking a manifest or config, not
/// just the first one, so callers can print a full diagnosis.
class ValidationError : public Error {
public:
    explicit ValidationError(std::vector<std::string> diagnostics)
        : Error(diagnostics.empty() ? std::string("validation failed")
                                    : diagnostics.front()),
          diagnostics_(std::move(diagnostics)) {}

    const std::vector<std::string>& diagnostics() const { return diagnostics_; }

private:
    std::vector<std::string> diagnostics_;
};

}  // namespace roivqa
