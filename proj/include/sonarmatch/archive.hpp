#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "sonarmatch/dataset.hpp"

namespace sonarmatch {

// PublishedArchive access (HDF5). The loader probes, in order:
//   - an optional group named after the split (e.g. /train, /test);
//   - paired patches as one rank-4 array X|x|patches|data|pairs shaped
//     (N,2,H,W) or (N,H,W,2), or as two arrays X1/X2, a/b, left/right,
//     patch_a/patch_b shaped (N,H,W), (N,1,H,W) or (N,H,W,1);
//   - labels Y|y|labels|label shaped (N) or (N,1);
// each name also tried with a `_<split>` suffix when a split is given.
// Integer pixels are divided by 255; float pixels are divided by 255 only when
// they exceed 1.

/// Known splits (train, test, validation, val order) found in an archive
/// file as groups or `_<split>` dataset suffixes.
std::vector<std::string> archive_splits(const std::filesystem::path& path);

/// Writes `d` as group `/<split>` with X (N,2,H,W) uint8 and Y (N) uint8.
/// Appends to an existing file. Pixels are quantised to round(255 v).
void save_archive(const PairDataset& d, const std::filesystem::path& path, const std::string& split);

}  // namespace sonarmatch
