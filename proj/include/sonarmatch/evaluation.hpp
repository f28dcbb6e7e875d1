#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "sonarmatch/architectures.hpp"
#include "sonarmatch/dataset.hpp"

namespace sonarmatch {

class Model;

enum class ScoreOrientation { HigherIsMatch, LowerIsMatch };

std::string to_string(ScoreOrientation o);
ScoreOrientation score_orientation_from_string(const std::string& s);
ScoreOrientation orientation_for(OutputSemantics s);

struct ScoreEntry {
  std::int64_t index = 0;
  double score = 0.0;
  std::uint8_t label = 0;

  friend bool operator==(const ScoreEntry&, const ScoreEntry&) = default;
};

struct ScoreSet {
  std::vector<ScoreEntry> entries;
  ScoreOrientation orientation = ScoreOrientation::HigherIsMatch;
  LabelOrientation labels = LabelOrientation::MatchIsOne;

  std::size_t size() const noexcept { return entries.size(); }
  friend bool operator==(const ScoreSet&, const ScoreSet&) = default;
};

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
};

struct RocResult {
  std::vector<RocPoint> points;
  double auc = 0.0;
};

/// Pairs raw scores with the dataset's indices and labels.
ScoreSet make_score_set(const PairDataset& d, std::span<const double> scores, ScoreOrientation o);

/// Deterministic scores with dropout disabled; order follows the dataset.
ScoreSet score_dataset(Model& m, const PairDataset& d);

/// HigherIsMatch scores and MatchIsOne labels. Idempotent.
ScoreSet canonicalize(const ScoreSet& s);

/// ROC over all distinct thresholds of the canonical scores, from (0,0) to
/// (1,1), with the area by trapezoidal integration. Throws DataError unless
/// both classes are present.
RocResult auc_trapezoid(const ScoreSet& s);

/// Fraction of (match, non-match) pairs ranked correctly, ties counting 1/2.
double auc_pairwise_oracle(const ScoreSet& s);

struct ReportEntry {
  std::string name;
  RocResult roc;
  std::int64_t params = 0;
};

/// Writes roc_<name>.csv (fpr,tpr) per entry, summary.csv (name,auc,params)
/// and roc.svg into `dir`, returning the paths written.
std::vector<std::filesystem::path> emit_report(std::span<const ReportEntry> entries,
                                               const std::filesystem::path& dir);

/// Score CSV: a "# orientation=... labels=..." line, then index,label,score.
void write_scores(const ScoreSet& s, const std::filesystem::path& path);
ScoreSet read_scores(const std::filesystem::path& path);

/// Per-pair canonical scores of several models side by side:
/// index,label,<name>...
void write_score_table(std::span<const std::string> names, std::span<const ScoreSet> sets,
                       const std::filesystem::path& path);

}  // namespace sonarmatch
