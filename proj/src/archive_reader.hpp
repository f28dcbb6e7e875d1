#pragma once

#include <filesystem>
#include <string>

#include "sonarmatch/dataset.hpp"

namespace sonarmatch::detail {

PairDataset read_archive(const std::filesystem::path& path, const std::string& split);

}  // namespace sonarmatch::detail
