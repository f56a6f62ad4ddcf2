#pragma once

#include <stdexcept>
#include <string>

namespace facegan {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or argument contract violated by the caller.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Malformed, missing or inconsistent data (files, meshes, datasets).
class DataError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf or an ill-conditioned system.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace facegan
