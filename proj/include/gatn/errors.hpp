#pragma once

#include <stdexcept>

namespace gatn {

// Tensor dimension / precondition violations.
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// API misuse (backward before forward, label out of range, ...).
struct UsageError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// File and serialization problems.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace gatn
