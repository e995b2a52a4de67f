#pragma once

#include <stdexcept>
#include <string>

namespace alrelu {

/// Tensor or layer shapes that do not fit together.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Inputs that violate a documented precondition (labels out of range,
/// too few samples per class, empty matrices, bad configs).
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed files: CSV cells, PGM headers, model JSON.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace alrelu
