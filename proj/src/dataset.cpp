#include "sonarmatch/dataset.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "archive_reader.hpp"
#include "sonarmatch/error.hpp"
#include "sonarmatch/rng.hpp"

namespace sonarmatch {

namespace {

constexpr std::array<char, 4> kRawMagic = {'S', 'M', 'P', '1'};

void put_u32(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> b = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                                 static_cast<char>((v >> 16) & 0xFF),
                                 static_cast<char>((v >> 24) & 0xFF)};
  out.write(b.data(), 4);
}

std::uint32_t get_u32(std::istream& in, const std::string& what) {
  std::array<unsigned char, 4> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 4)) throw DataError("truncated RawBinary " + what);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_floats(std::ostream& out, std::span<const float> values) {
  std::vector<char> buf(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(values[i]);
    for (int k = 0; k < 4; ++k) buf[i * 4 + k] = static_cast<char>((bits >> (8 * k)) & 0xFF);
  }
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

std::vector<float> get_floats(std::istream& in, std::size_t n) {
  std::vector<unsigned char> buf(n * 4);
  if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
    throw DataError("truncated RawBinary pixel block");
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t bits = 0;
    for (int k = 0; k < 4; ++k) bits |= static_cast<std::uint32_t>(buf[i * 4 + k]) << (8 * k);
    out[i] = std::bit_cast<float>(bits);
  }
  return out;
}

PairDataset load_raw(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open dataset file: " + path.string());
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), 4) || magic != kRawMagic)
    throw DataError("malformed RawBinary header (bad magic) in " + path.string());
  const auto count = get_u32(in, "header");
  const auto height = get_u32(in, "header");
  const auto width = get_u32(in, "header");
  if (height == 0 || width == 0) throw DataError("RawBinary header has zero patch dimension");
  const std::size_t n = static_cast<std::size_t>(height) * width;

  PairDataset d;
  d.split_name = path.stem().string();
  d.orientation = LabelOrientation::MatchIsOne;
  d.pairs.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    PatchPair p;
    p.a = Patch(static_cast<int>(height), static_cast<int>(width), get_floats(in, n));
    p.b = Patch(static_cast<int>(height), static_cast<int>(width), get_floats(in, n));
    char label = 0;
    if (!in.read(&label, 1)) throw DataError("truncated RawBinary label");
    p.label = static_cast<std::uint8_t>(label);
    p.index = i;
    d.pairs.push_back(std::move(p));
  }
  if (in.peek() != std::char_traits<char>::eof())
    throw DataError("RawBinary file has trailing bytes after " + std::to_string(count) + " pairs");
  validate_dataset(d);
  return d;
}

}  // namespace

std::string to_string(LabelOrientation o) {
  return o == LabelOrientation::MatchIsOne ? "MatchIsOne" : "MatchIsZero";
}

LabelOrientation label_orientation_from_string(const std::string& s) {
  if (s == "MatchIsOne") return LabelOrientation::MatchIsOne;
  if (s == "MatchIsZero") return LabelOrientation::MatchIsZero;
  throw ConfigError("unknown label orientation: " + s);
}

Patch::Patch(int height, int width, std::vector<float> pixels) : height_(height), width_(width) {
  if (height <= 0 || width <= 0) throw DataError("patch dimensions must be positive");
  if (pixels.size() != static_cast<std::size_t>(height) * width)
    throw DataError("patch pixel count does not match its dimensions");
  pixels_ = std::make_shared<const std::vector<float>>(std::move(pixels));
}

std::span<const float> Patch::pixels() const noexcept {
  if (!pixels_) return {};
  return {pixels_->data(), pixels_->size()};
}

bool operator==(const Patch& a, const Patch& b) {
  if (a.height_ != b.height_ || a.width_ != b.width_) return false;
  const auto pa = a.pixels();
  const auto pb = b.pixels();
  // Bitwise comparison so round-trip checks are exact (and NaN-safe).
  return pa.size() == pb.size() &&
         (pa.empty() || std::memcmp(pa.data(), pb.data(), pa.size_bytes()) == 0);
}

std::size_t PairDataset::match_count() const noexcept {
  const std::uint8_t match = orientation == LabelOrientation::MatchIsOne ? 1 : 0;
  return static_cast<std::size_t>(std::count_if(
      pairs.begin(), pairs.end(), [&](const PatchPair& p) { return p.label == match; }));
}

std::uint8_t PairDataset::canonical_label(std::size_t row) const noexcept {
  const auto y = pairs[row].label;
  return orientation == LabelOrientation::MatchIsOne ? y : static_cast<std::uint8_t>(1 - y);
}

PairDataset PairDataset::subset(std::span<const std::size_t> rows, std::string name) const {
  PairDataset out;
  out.split_name = name.empty() ? split_name : std::move(name);
  out.orientation = orientation;
  out.pairs.reserve(rows.size());
  for (auto r : rows) out.pairs.push_back(pairs.at(r));
  return out;
}

void validate_dataset(const PairDataset& d) {
  if (d.empty()) return;
  const int h = d.height();
  const int w = d.width();
  for (const auto& p : d.pairs) {
    if (p.a.height() != h || p.a.width() != w || p.b.height() != h || p.b.width() != w)
      throw DataError("inconsistent patch dimensions at pair " + std::to_string(p.index));
    if (p.label > 1)
      throw DataError("label outside {0,1} at pair " + std::to_string(p.index) + ": " +
                      std::to_string(p.label));
    for (const Patch* patch : {&p.a, &p.b}) {
      for (float v : patch->pixels()) {
        if (!(v >= 0.0f && v <= 1.0f))
          throw DataError("pixel value outside [0,1] at pair " + std::to_string(p.index));
      }
    }
  }
}

PairDataset load_dataset(const std::filesystem::path& path, DatasetFormat format,
                         const std::string& split) {
  if (!std::filesystem::exists(path)) throw DataError("dataset not found: " + path.string());
  if (format == DatasetFormat::RawBinary) return load_raw(path);
  auto d = detail::read_archive(path, split);
  validate_dataset(d);
  return d;
}

void save_raw(const PairDataset& d, const std::filesystem::path& path) {
  if (d.pairs.size() > 0xFFFFFFFFull) throw DataError("too many pairs for RawBinary");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write dataset file: " + path.string());
  out.write(kRawMagic.data(), 4);
  put_u32(out, static_cast<std::uint32_t>(d.pairs.size()));
  put_u32(out, static_cast<std::uint32_t>(d.height()));
  put_u32(out, static_cast<std::uint32_t>(d.width()));
  for (std::size_t i = 0; i < d.pairs.size(); ++i) {
    put_floats(out, d.pairs[i].a.pixels());
    put_floats(out, d.pairs[i].b.pixels());
    const char label = static_cast<char>(d.canonical_label(i));
    out.write(&label, 1);
  }
  if (!out) throw DataError("write failed: " + path.string());
}

PairDataset flip_labels(const PairDataset& d) {
  PairDataset out = d;
  for (auto& p : out.pairs) p.label = static_cast<std::uint8_t>(1 - p.label);
  out.orientation = toggled(d.orientation);
  return out;
}

PairDataset with_orientation(const PairDataset& d, LabelOrientation wanted) {
  return d.orientation == wanted ? d : flip_labels(d);
}

std::pair<PairDataset, PairDataset> split_validation(const PairDataset& d, double fraction,
                                                     std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0))
    throw ConfigError("validation fraction must lie in (0,1), got " + std::to_string(fraction));
  const std::size_t n = d.size();
  if (n < 2) throw ConfigError("need at least 2 pairs to split off a validation set");
  const auto n_val = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n))), 1, n - 1);

  std::array<std::vector<std::size_t>, 2> by_label;
  for (std::size_t i = 0; i < n; ++i) by_label[d.pairs[i].label].push_back(i);

  // Largest-remainder apportionment of n_val over the two classes.
  std::array<std::size_t, 2> quota{};
  std::array<double, 2> remainder{};
  std::size_t assigned = 0;
  for (int c = 0; c < 2; ++c) {
    const double exact = static_cast<double>(n_val) * by_label[c].size() / static_cast<double>(n);
    quota[c] = static_cast<std::size_t>(std::floor(exact));
    remainder[c] = exact - static_cast<double>(quota[c]);
    assigned += quota[c];
  }
  while (assigned < n_val) {
    const int c = remainder[1] > remainder[0] ? 1 : 0;
    const int pick = quota[c] < by_label[c].size() ? c : 1 - c;
    ++quota[pick];
    remainder[pick] = -1.0;
    ++assigned;
  }

  Rng rng(derive_seed(seed, streams::kSplit));
  std::vector<char> in_val(n, 0);
  for (int c = 0; c < 2; ++c) {
    auto idx = by_label[c];
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t k = 0; k < quota[c]; ++k) in_val[idx[k]] = 1;
  }
  std::vector<std::size_t> train_rows;
  std::vector<std::size_t> val_rows;
  for (std::size_t i = 0; i < n; ++i) (in_val[i] ? val_rows : train_rows).push_back(i);
  return {d.subset(train_rows, d.split_name + "-train"), d.subset(val_rows, d.split_name + "-val")};
}

std::vector<std::vector<std::size_t>> batches(const PairDataset& d, std::size_t batch_size,
                                              bool shuffle, std::uint64_t seed,
                                              std::uint64_t epoch) {
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (d.empty()) throw DataError("cannot batch an empty dataset");
  std::vector<std::size_t> order(d.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (shuffle) {
    Rng rng(derive_seed(derive_seed(seed, streams::kShuffle), epoch));
    std::shuffle(order.begin(), order.end(), rng);
  }
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const auto end = std::min(order.size(), start + batch_size);
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

}  // namespace sonarmatch
