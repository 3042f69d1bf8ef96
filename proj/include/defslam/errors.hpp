#pragma once

#include <stdexcept>
#include <string>

namespace defslam {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Rotation logarithm requested at an angle of exactly pi (axis sign undefined).
class AmbiguousAxisError : public Error {
public:
    using Error::Error;
};

/// Matrix does not satisfy the rotation invariants.
class InvalidRotationError : public Error {
public:
    using Error::Error;
};

/// Node layout cannot produce a weight partition (coincident nodes, too few nodes).
class DegenerateGraphError : public Error {
public:
    using Error::Error;
};

class DimensionMismatchError : public Error {
public:
    using Error::Error;
};

/// A residual evaluation produced NaN or Inf.
class NonFiniteError : public Error {
public:
    using Error::Error;
};

/// No usable observations / feature windows for the requested solver.
class UnsolvableInstanceError : public Error {
public:
    using Error::Error;
};

/// Two consecutive steps share fewer than three co-visible features.
class InitializationGapError : public Error {
public:
    using Error::Error;
};

/// Raised when a state is expected to be at zero residual but is not.
class PreconditionError : public Error {
public:
    using Error::Error;
};

/// Malformed configuration, dataset or fixture document.
class SchemaError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace defslam
