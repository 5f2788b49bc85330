#pragma once

#include <stdexcept>
#include <string>

namespace attmetnet {

// Invalid tensor/raster geometry (wrong extent, mismatched dims).
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid argument value or violated precondition.
struct ValueError : std::runtime_error {
    explicit ValueError(const std::string& msg) : std::runtime_error(msg) {}
};

// File format / payload validation failure.
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace attmetnet
