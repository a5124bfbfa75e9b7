#pragma once

#include <stdexcept>
#include <string>

namespace voldiff {

// Shape or channel-layout disagreement between operands.
class ShapeError : public std::runtime_error {
public:
    explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

// Malformed or truncated file (VVOL volumes, VDCK checkpoints).
class FormatError : public std::runtime_error {
public:
    explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

// Non-finite loss during optimization.
class TrainingDivergedError : public std::runtime_error {
public:
    explicit TrainingDivergedError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace voldiff
