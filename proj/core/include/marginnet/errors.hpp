#pragma once

#include <stdexcept>
#include <string>

namespace marginnet {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Matrix or vector shapes that do not fit together.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Argument outside the mathematical domain of an operation (e.g. a negative
// multiplier entry passed to a square root factorization).
class DomainError : public Error {
 public:
  using Error::Error;
};

// An expression references a decision variable that has no value.
class UnassignedVariableError : public Error {
 public:
  using Error::Error;
};

// The implicit activation equation could not be solved.
class WellPosednessError : public Error {
 public:
  using Error::Error;
};

// I - RS is numerically singular, so no (U, V) factorization exists.
class DegenerateCertificateError : public Error {
 public:
  using Error::Error;
};

// The convexified set is empty for the requested margin and fixed multiplier.
class MarginInfeasibleError : public Error {
 public:
  using Error::Error;
};

// The conic backend stopped without a trustworthy answer.
class NumericalFailureError : public Error {
 public:
  using Error::Error;
};

// A block solve during controller reconstruction failed.
class ReconstructionError : public Error {
 public:
  using Error::Error;
};

// A set that should be nonempty by construction was reported empty.
class InternalConsistencyError : public Error {
 public:
  using Error::Error;
};

// Certification at zero disk size failed, so no margin can be bracketed.
class NoNominalStabilityError : public Error {
 public:
  using Error::Error;
};

}  // namespace marginnet
