#include "sonarmatch/ensemble.hpp"

#include <algorithm>
#include <cmath>

#include "sonarmatch/error.hpp"

namespace sonarmatch {

ScoreSet ensemble_average(std::span<const ScoreSet> members, std::span<const double> weights) {
  if (members.size() < 2) throw ConfigError("an ensemble needs at least 2 members");
  if (!weights.empty() && weights.size() != members.size())
    throw ConfigError("need one weight per ensemble member");
  double weight_sum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("ensemble weights must be finite and >= 0");
    weight_sum += w;
  }
  if (!weights.empty() && !(weight_sum > 0.0)) throw ConfigError("ensemble weights sum to 0");

  const auto& first = members.front();
  for (std::size_t k = 0; k < members.size(); ++k) {
    const auto& m = members[k];
    if (m.orientation != ScoreOrientation::HigherIsMatch)
      throw DataError("ensemble member " + std::to_string(k) +
                      " holds distances (lower_is_match); only probability scores can be averaged. "
                      "Calibrate it to a [0,1] match probability first.");
    for (const auto& e : m.entries)
      if (!(e.score >= 0.0 && e.score <= 1.0))
        throw DataError("ensemble member " + std::to_string(k) + " has score " + std::to_string(e.score) +
                        " outside [0,1] for pair " + std::to_string(e.index) +
                        "; canonicalize and calibrate to probabilities first.");
    if (m.labels != first.labels) throw DataError("ensemble members use different label orientations");
    if (m.size() != first.size()) throw DataError("ensemble members cover different numbers of pairs");
    for (std::size_t i = 0; i < m.size(); ++i)
      if (m.entries[i].index != first.entries[i].index || m.entries[i].label != first.entries[i].label)
        throw DataError("ensemble members disagree on pair " + std::to_string(i) + " (index or label)");
  }

  ScoreSet out = first;
  std::vector<double> terms(members.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (std::size_t k = 0; k < members.size(); ++k)
      terms[k] = (weights.empty() ? 1.0 : weights[k]) * members[k].entries[i].score;
    std::sort(terms.begin(), terms.end());
    double acc = 0.0;
    for (double t : terms) acc += t;
    const double denom = weights.empty() ? static_cast<double>(members.size()) : weight_sum;
    out.entries[i].score = std::clamp(acc / denom, 0.0, 1.0);
  }
  return out;
}

}  // namespace sonarmatch
