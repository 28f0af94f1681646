#pragma once

#include <stdexcept>
#include <string>

namespace vifg {

/// Malformed graph/state structure: missing keys, mismatched layouts, duplicate inserts.
struct StructuralError : std::logic_error {
  explicit StructuralError(const std::string& what) : std::logic_error(what) {}
};

/// Optimizer could not make progress even at maximum damping.
struct DivergedError : std::runtime_error {
  explicit DivergedError(const std::string& what) : std::runtime_error(what) {}
};

/// Requested marginal does not exist: the information matrix is singular.
/// For the scale variable this is a meaningful signal (scale unobservable).
struct UnobservableError : std::runtime_error {
  explicit UnobservableError(const std::string& what) : std::runtime_error(what) {}
};

/// Eliminated block is singular beyond the allowed regularization.
struct DegenerateMarginalizationError : std::runtime_error {
  explicit DegenerateMarginalizationError(const std::string& what) : std::runtime_error(what) {}
};

/// A required measurement segment is missing.
struct DataGapError : std::runtime_error {
  explicit DataGapError(const std::string& what) : std::runtime_error(what) {}
};

/// Covariance of a measurement factor is not invertible.
struct DegenerateCovarianceError : std::runtime_error {
  explicit DegenerateCovarianceError(const std::string& what) : std::runtime_error(what) {}
};

/// Bad measurement data (non-positive dt, unordered timestamps).
struct DataError : std::runtime_error {
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

/// Invalid configuration (e.g. trajectory segments that do not join smoothly).
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Not enough data to compute the requested quantity.
struct InsufficientDataError : std::runtime_error {
  explicit InsufficientDataError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace vifg
