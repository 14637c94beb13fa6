#pragma once

#include <stdexcept>
#include <string>

namespace dmdno {

/// Malformed arguments: wrong shapes, non-finite values, out-of-range options.
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Input is well-formed but carries no usable information (e.g. all-zero data).
class DegenerateInput : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An iterative method failed or a computation produced non-finite values.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A persisted file does not match its declared layout.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace dmdno
