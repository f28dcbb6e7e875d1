#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <span>
#include <string>

#include "sonarmatch/error.hpp"

namespace sonarmatch {

struct ContrastiveConfig {
  double margin = 1.0;
};

inline void validate(const ContrastiveConfig& cfg) {
  if (!(cfg.margin > 0.0)) throw ConfigError("contrastive margin must be > 0");
}

/// Added under the square root on the gradient path only, so that the
/// distance gradient stays finite for identical embeddings.
inline constexpr double kDistanceGradStabilizer = 1e-12;

/// Probability clamp for binary cross-entropy.
inline constexpr double kBceEpsilon = 1e-7;

template <std::floating_point T>
T euclidean_distance(std::span<const T> e1, std::span<const T> e2) {
  if (e1.size() != e2.size())
    throw ConfigError("embedding length mismatch: " + std::to_string(e1.size()) + " vs " +
                      std::to_string(e2.size()));
  T sum = 0;
  for (std::size_t i = 0; i < e1.size(); ++i) {
    const T d = e1[i] - e2[i];
    sum += d * d;
  }
  return std::sqrt(sum);
}

/// dD/de1 (dD/de2 is its negation): (e1 - e2) / sqrt(|e1 - e2|^2 + stabilizer).
template <std::floating_point T>
void euclidean_distance_grad(std::span<const T> e1, std::span<const T> e2, std::span<T> grad_e1) {
  if (e1.size() != e2.size() || grad_e1.size() != e1.size())
    throw ConfigError("embedding length mismatch");
  T sum = 0;
  for (std::size_t i = 0; i < e1.size(); ++i) {
    const T d = e1[i] - e2[i];
    sum += d * d;
  }
  const T denom = std::sqrt(sum + static_cast<T>(kDistanceGradStabilizer));
  for (std::size_t i = 0; i < e1.size(); ++i) grad_e1[i] = (e1[i] - e2[i]) / denom;
}

/// L = (1-Y)/2 D^2 + Y/2 max(0, m - D)^2, with Y = 0 for similar pairs.
template <std::floating_point T>
T contrastive_loss(T distance, int y, const ContrastiveConfig& cfg = {}) {
  validate(cfg);
  if (!(distance >= 0)) throw ConfigError("contrastive loss needs a non-negative distance");
  if (y != 0 && y != 1) throw ConfigError("contrastive label must be 0 or 1");
  const T m = static_cast<T>(cfg.margin);
  if (y == 0) return static_cast<T>(0.5) * distance * distance;
  const T hinge = std::max(T(0), m - distance);
  return static_cast<T>(0.5) * hinge * hinge;
}

/// dL/dD. At the hinge point D = m the inactive side (0) is used.
template <std::floating_point T>
T contrastive_loss_grad(T distance, int y, const ContrastiveConfig& cfg = {}) {
  validate(cfg);
  if (!(distance >= 0)) throw ConfigError("contrastive loss needs a non-negative distance");
  if (y != 0 && y != 1) throw ConfigError("contrastive label must be 0 or 1");
  const T m = static_cast<T>(cfg.margin);
  if (y == 0) return distance;
  return distance < m ? -(m - distance) : T(0);
}

/// Arithmetic mean of per-pair contrastive losses.
template <std::floating_point T, class Label>
T contrastive_batch(std::span<const T> distances, std::span<const Label> labels,
                    const ContrastiveConfig& cfg = {}) {
  if (distances.empty()) throw ConfigError("contrastive batch is empty");
  if (distances.size() != labels.size()) throw ConfigError("distance/label length mismatch");
  // Accumulate in double so the mean does not depend on summation order
  // beyond rounding of the final cast.
  double sum = 0;
  for (std::size_t i = 0; i < distances.size(); ++i)
    sum += static_cast<double>(contrastive_loss(distances[i], static_cast<int>(labels[i]), cfg));
  return static_cast<T>(sum / static_cast<double>(distances.size()));
}

template <std::floating_point T>
T clamp_probability(T p) {
  return std::clamp(p, static_cast<T>(kBceEpsilon), static_cast<T>(1.0 - kBceEpsilon));
}

/// -y ln p - (1-y) ln(1-p), with p clamped to [eps, 1-eps].
template <std::floating_point T>
T binary_cross_entropy(T p, int y) {
  if (y != 0 && y != 1) throw ConfigError("BCE label must be 0 or 1");
  const T q = clamp_probability(p);
  return y == 1 ? -std::log(q) : -std::log(T(1) - q);
}

/// dBCE/dp on the clamped probability (zero outside the clamp range).
template <std::floating_point T>
T binary_cross_entropy_grad(T p, int y) {
  if (y != 0 && y != 1) throw ConfigError("BCE label must be 0 or 1");
  const T lo = static_cast<T>(kBceEpsilon);
  const T hi = static_cast<T>(1.0 - kBceEpsilon);
  if (p < lo || p > hi) return T(0);
  return y == 1 ? -T(1) / p : T(1) / (T(1) - p);
}

}  // namespace sonarmatch
