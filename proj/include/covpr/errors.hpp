#pragma once

#include <stdexcept>

namespace covpr {

// File and stream problems; the CLI maps these to exit code 2.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Dimension, shape and configuration problems; the CLI maps these to exit
// code 3.
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace covpr
