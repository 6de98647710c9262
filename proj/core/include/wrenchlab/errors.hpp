#pragma once

#include <stdexcept>
#include <string>

namespace wrenchlab {

// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// A value failed a construction-time invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// All corner wrenches coincide; no enclosing box can be oriented.
class DegenerateSet : public Error {
 public:
  using Error::Error;
};

// Integration produced NaN or infinity.
class NonFiniteState : public Error {
 public:
  using Error::Error;
};

// Tensor dimensions do not chain.
class ShapeMismatch : public Error {
 public:
  using Error::Error;
};

// Serialized payload is truncated or malformed.
class CorruptPayload : public Error {
 public:
  using Error::Error;
};

// Serialized payload has an unsupported format version.
class VersionMismatch : public Error {
 public:
  using Error::Error;
};

// Training loss became non-finite.
class Diverged : public Error {
 public:
  using Error::Error;
};

// Donor selection over an empty library.
class EmptyLibrary : public Error {
 public:
  using Error::Error;
};

// No library entry is comparable under the requested measure.
class NoComparableEntry : public Error {
 public:
  using Error::Error;
};

// Parameter-vector measure applied across different motor counts.
class IncomparableConfigs : public Error {
 public:
  using Error::Error;
};

// Rejection sampling exhausted its attempt budget.
class SamplingExhausted : public Error {
 public:
  using Error::Error;
};

// Too few paired points for a correlation estimate.
class InsufficientData : public Error {
 public:
  using Error::Error;
};

}  // namespace wrenchlab
