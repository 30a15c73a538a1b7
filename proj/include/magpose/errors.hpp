#pragma once

#include <stdexcept>
#include <string>

namespace magpose {

// Base class for all library errors. Subcommands map these onto exit codes.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor/vector operands disagree on shape.
struct ShapeMismatch : Error {
  using Error::Error;
};

// Gaussian operands disagree on dimension.
struct DimensionMismatch : Error {
  using Error::Error;
};

// 6D rotation vector cannot be orthonormalized (first column near zero or
// columns near parallel).
struct DegenerateSixD : Error {
  using Error::Error;
};

// Field query point is inside the exclusion radius of a dipole.
struct TooCloseToSource : Error {
  using Error::Error;
};

// Standardization statistics of a model and a dataset differ.
struct StatsMismatch : Error {
  using Error::Error;
};

// A model failed to produce a valid pose estimate.
struct EstimationFailed : Error {
  using Error::Error;
};

// Malformed file content (CSV rows, config lines, model files).
struct ParseError : Error {
  using Error::Error;
};

// Artifact file carries an unsupported format version.
struct VersionMismatch : Error {
  using Error::Error;
};

}  // namespace magpose
