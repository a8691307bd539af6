#pragma once

#include <stdexcept>
#include <string>

namespace bcsnet {

/// Raised when an input violates a documented precondition.
struct ValidationError : std::runtime_error {
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Raised when a file cannot be read, decoded, or written.
struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Raised when training produces a non-finite loss component.
struct TrainingDiverged : std::runtime_error {
  explicit TrainingDiverged(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace bcsnet
