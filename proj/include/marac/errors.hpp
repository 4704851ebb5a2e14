#pragma once

#include <stdexcept>
#include <string>

namespace marac {

// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not conform.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A documented precondition was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

// A factorization or solve failed even after jitter escalation.
class SingularityError : public Error {
 public:
  using Error::Error;
};

// Not enough frames to condition on the requested lags.
class InsufficientDataError : public Error {
 public:
  using Error::Error;
};

// On-disk data did not match its declared layout.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Something that cannot happen if the algorithm is implemented correctly.
class InternalError : public Error {
 public:
  using Error::Error;
};

// Simulator or model configuration violates the stationarity condition.
class StationarityError : public Error {
 public:
  using Error::Error;
};

}  // namespace marac
