#pragma once

#include <stdexcept>
#include <string>

namespace anclaf {

// Shape or length disagreement between operands.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Input is valid in shape but the statistic is undefined (zero variance,
// empty set, ...).
class DegenerateInputError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

// Training produced a non-finite loss, gradient, or parameter.
class DivergenceError : public std::runtime_error {
public:
    DivergenceError(std::string stage, const std::string& what)
        : std::runtime_error(what), stage_(std::move(stage)) {}
    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

// Malformed, truncated, or version-incompatible file.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace anclaf
