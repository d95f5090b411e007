#pragma once

#include <stdexcept>
#include <string>

namespace terata {

// Malformed input text: bad header, unreadable field, wrong column count.
// Messages carry the 1-based data row where the problem was found.
struct ParseError : std::runtime_error {
    explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

// Structurally valid input that violates a cohort contract (duplicate id,
// end time before enrollment, unknown covariate level, ...).
struct ValidationError : std::runtime_error {
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical failure inside an estimation routine: separation, singular
// information matrix, no events, too many dropped bootstrap replicates.
struct FitError : std::runtime_error {
    explicit FitError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace terata
