#pragma once

#include <stdexcept>
#include <string>

namespace icam {

// Error taxonomy shared across the library. Everything derives from
// icam::Error so callers can catch one type at the CLI boundary.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Mismatched tensor dimensions.
struct ShapeError : Error {
  using Error::Error;
};

// Mathematically invalid input (division by zero, log of non-positive).
struct DomainError : Error {
  using Error::Error;
};

// NaN/Inf produced by an operation; surfaced instead of propagated.
struct NumericError : Error {
  using Error::Error;
};

// No feasible choice remains (all-masked softmax row, dead rollout state).
struct InfeasibleError : Error {
  using Error::Error;
};

// API contract violated (non-scalar backward seed, infeasible solution
// handed to a routine that requires feasibility).
struct ContractError : Error {
  using Error::Error;
};

// Invalid argument value (scale < 2, k > N, ...).
struct ArgumentError : Error {
  using Error::Error;
};

// Input too large for an exact oracle.
struct SizeError : Error {
  using Error::Error;
};

// Malformed instance/config file; message carries the line number.
struct ParseError : Error {
  using Error::Error;
};

}  // namespace icam
