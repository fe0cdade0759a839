#pragma once

#include <stdexcept>

namespace pydt {

/// Malformed or inconsistent input data (files, shapes, values).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A computation produced a non-finite or otherwise unusable result.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace pydt
