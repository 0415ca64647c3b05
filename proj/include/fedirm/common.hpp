#pragma once

#include <stdexcept>
#include <string>

namespace fedirm {

/// Caller violated an argument contract (shape mismatch, bad range, ...).
struct InvalidInput : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// A computation produced a non-finite value.
struct NumericalFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A file did not match its documented layout.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A metric has no defined value on the given data.
struct UndefinedMetric : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Bad or inconsistent experiment configuration.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Filesystem level failure (missing file, unwritable directory, ...).
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace fedirm
