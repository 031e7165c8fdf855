#pragma once

#include <stdexcept>
#include <string>

namespace davihd {

// Shape or contract violation in an in-process call.
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Malformed or inconsistent external data (files, manifests, formats).
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-finite values or a failed numerical check.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace davihd
