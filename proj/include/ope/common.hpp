#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ope {

/// Raised when an input violates a documented precondition (bad spec,
/// malformed config, unnormalized probabilities). The CLI maps it to exit 1.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a well-formed computation cannot be carried out on the data
/// at hand (zero behavior probability, unvisited cell, singular system).
class EstimationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Action recorded for steps where no decision is taken (history padding
/// before t = 0 and the absorbing tail of a terminated episode).
inline constexpr int kNullAction = -1;

inline constexpr double kProbabilityTolerance = 1e-12;

}  // namespace ope
