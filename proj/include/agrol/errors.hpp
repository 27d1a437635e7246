#pragma once

#include <stdexcept>
#include <string>

namespace agrol {

// Shapes of the operands do not conform.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// A 6D encoding (or axis) that cannot be turned into a rotation.
struct DegeneracyError : std::domain_error {
  using std::domain_error::domain_error;
};

// Axis passed where a unit vector is required.
struct NormalizationError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct TopologyError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Sequence too short for the requested operation.
struct LengthError : std::length_error {
  using std::length_error::length_error;
};

// Stitched chunks leave frames uncovered.
struct CoverageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Division by sqrt(1 - alpha_bar) with alpha_bar == 1.
struct ScheduleError : std::domain_error {
  using std::domain_error::domain_error;
};

struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct BadMagicError : FormatError {
  using FormatError::FormatError;
};

struct TruncatedError : FormatError {
  using FormatError::FormatError;
};

struct VersionError : FormatError {
  using FormatError::FormatError;
};

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

} // namespace agrol
