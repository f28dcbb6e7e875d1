#pragma once

#include <span>
#include <vector>

#include "sonarmatch/evaluation.hpp"

namespace sonarmatch {

/// Per-pair average of member scores. Members must be HigherIsMatch
/// probabilities in [0,1] over the same pairs (same order and labels).
/// Weights default to uniform; given weights must be >= 0 with a positive sum.
ScoreSet ensemble_average(std::span<const ScoreSet> members, std::span<const double> weights = {});

}  // namespace sonarmatch
