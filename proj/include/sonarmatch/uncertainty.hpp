#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "sonarmatch/dataset.hpp"
#include "sonarmatch/evaluation.hpp"
#include "sonarmatch/model.hpp"

namespace sonarmatch {

struct McEntry {
  std::int64_t index = 0;
  double mean = 0.0;
  double std = 0.0;
  int samples = 0;
};

struct McResult {
  std::vector<McEntry> entries;
  ScoreOrientation orientation = ScoreOrientation::HigherIsMatch;
};

struct McOptions {
  int passes = 20;
  std::uint64_t seed = 0;
  /// Worker threads; 0 means hardware concurrency. Results do not depend on it.
  unsigned threads = 1;
  /// Accept models whose dropout rates are all zero (std is then 0).
  bool allow_zero_rate = false;
  /// Use this seed for every pass instead of one derived per pass.
  std::optional<std::uint64_t> fixed_pass_seed;
};

/// Seed of pass t: derive_seed(derive_seed(seed, kMcDropout), t).
std::uint64_t mc_pass_seed(std::uint64_t seed, int pass);

/// Raw scores of every pass: result[t][row].
std::vector<std::vector<double>> mc_dropout_samples(const Model& m, const PairDataset& d, const McOptions& opt);

/// Per-pair mean and population standard deviation over the passes.
McResult mc_dropout_scores(const Model& m, const PairDataset& d, const McOptions& opt = {});

/// Summary of per-pass samples (samples[t][row]).
McResult summarize_samples(const std::vector<std::vector<double>>& samples, const PairDataset& d,
                           ScoreOrientation orientation);

/// Copy of a model with every dropout rate replaced.
Model with_dropout(const Model& m, double rate);

enum class RankDirection { Highest, Lowest };

/// Pair indices ordered by std (ties by index ascending); k is clamped to the
/// number of pairs.
std::vector<std::int64_t> rank_by_std(const McResult& r, std::size_t k, RankDirection dir);

/// CSV index,mean,std.
void write_mc_csv(const McResult& r, const std::filesystem::path& path);

/// PNG grid, one row per listed pair index: patch a, gap, patch b.
void write_thumbnails(const PairDataset& d, std::span<const std::int64_t> indices, const std::filesystem::path& path);

}  // namespace sonarmatch
