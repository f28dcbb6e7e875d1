#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace sonarmatch {

inline constexpr int kDefaultPatchSize = 96;

/// Meaning of a stored label. Canonical is MatchIsOne; contrastive training
/// works on MatchIsZero.
enum class LabelOrientation { MatchIsOne, MatchIsZero };

std::string to_string(LabelOrientation o);
LabelOrientation label_orientation_from_string(const std::string& s);

constexpr LabelOrientation toggled(LabelOrientation o) noexcept {
  return o == LabelOrientation::MatchIsOne ? LabelOrientation::MatchIsZero
                                           : LabelOrientation::MatchIsOne;
}

/// Single-channel intensity patch. Pixel storage is immutable and shared, so
/// copying a Patch (or a dataset of them) never copies pixels.
class Patch {
 public:
  Patch() = default;
  Patch(int height, int width, std::vector<float> pixels);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t size() const noexcept { return static_cast<std::size_t>(height_) * width_; }
  std::span<const float> pixels() const noexcept;
  float at(int row, int col) const noexcept { return pixels()[static_cast<std::size_t>(row) * width_ + col]; }

  friend bool operator==(const Patch& a, const Patch& b);

 private:
  int height_ = 0;
  int width_ = 0;
  std::shared_ptr<const std::vector<float>> pixels_;
};

struct PatchPair {
  Patch a;
  Patch b;
  std::uint8_t label = 0;
  std::int64_t index = 0;
};

struct PairDataset {
  std::vector<PatchPair> pairs;
  std::string split_name;
  LabelOrientation orientation = LabelOrientation::MatchIsOne;

  std::size_t size() const noexcept { return pairs.size(); }
  bool empty() const noexcept { return pairs.empty(); }
  int height() const noexcept { return pairs.empty() ? 0 : pairs.front().a.height(); }
  int width() const noexcept { return pairs.empty() ? 0 : pairs.front().a.width(); }

  /// Number of pairs that are matches, whatever the current orientation.
  std::size_t match_count() const noexcept;
  /// Label of a pair restated in MatchIsOne convention.
  std::uint8_t canonical_label(std::size_t row) const noexcept;
  /// Returns a dataset holding the given rows (in the given order).
  PairDataset subset(std::span<const std::size_t> rows, std::string split_name = {}) const;
};

enum class DatasetFormat { PublishedArchive, RawBinary };

/// Loads a dataset in MatchIsOne orientation with pixels in [0,1].
/// `split` selects a split inside a PublishedArchive (ignored for RawBinary).
/// Throws DataError on missing files, malformed headers, labels outside
/// {0,1} or inconsistent patch dimensions.
PairDataset load_dataset(const std::filesystem::path& path, DatasetFormat format,
                         const std::string& split = {});

/// Writes the RawBinary format. Labels are written in MatchIsOne convention.
void save_raw(const PairDataset& d, const std::filesystem::path& path);

/// Checks pixel range, dimensions and labels; throws DataError.
void validate_dataset(const PairDataset& d);

/// y -> 1 - y for every pair; orientation toggled.
PairDataset flip_labels(const PairDataset& d);

/// Returns a copy in the requested orientation (flipping if needed).
PairDataset with_orientation(const PairDataset& d, LabelOrientation wanted);

/// Seeded, stratified, disjoint and exhaustive split. The validation part
/// gets round(fraction * n) pairs (clamped to [1, n-1]) apportioned to each
/// class by largest remainder. Both parts keep the input's relative order.
std::pair<PairDataset, PairDataset> split_validation(const PairDataset& d, double fraction,
                                                     std::uint64_t seed);

/// Row indices for one epoch. Every row appears exactly once; the last batch
/// may be short. The shuffle order depends only on (seed, epoch).
std::vector<std::vector<std::size_t>> batches(const PairDataset& d, std::size_t batch_size,
                                              bool shuffle, std::uint64_t seed,
                                              std::uint64_t epoch = 0);

/// Sonar-like synthetic pairs: speckled low-intensity background with bright
/// object returns and acoustic shadows. Matching pairs show the same object
/// with a small shift and independent speckle; non-matching pairs show
/// different objects or background. Half the pairs match (rounded down).
PairDataset make_synthetic_pairs(std::size_t count, int height, int width, std::uint64_t seed,
                                 const std::string& split_name = "synthetic");

}  // namespace sonarmatch
