#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>

#include "sonarmatch/dataset.hpp"
#include "sonarmatch/error.hpp"
#include "support.hpp"

using namespace sonarmatch;

namespace {

PairDataset labelled(std::size_t n, std::size_t matches, int size = 4) {
  PairDataset d;
  d.split_name = "t";
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<float> a(size * size), b(size * size);
    std::iota(a.begin(), a.end(), 0.0f);
    for (auto& v : a) v = std::fmod(v * 0.37f + static_cast<float>(i) * 0.01f, 1.0f);
    std::fill(b.begin(), b.end(), static_cast<float>(i % 7) / 7.0f);
    d.pairs.push_back({Patch(size, size, a), Patch(size, size, b), static_cast<std::uint8_t>(i < matches ? 1 : 0),
                       static_cast<std::int64_t>(i)});
  }
  return d;
}

std::vector<std::int64_t> indices(const PairDataset& d) {
  std::vector<std::int64_t> v;
  for (const auto& p : d.pairs) v.push_back(p.index);
  return v;
}

}  // namespace

TEST(Dataset, RawBinaryRoundTripOfZeroPatches) {
  const auto dir = testing_support::temp_dir("raw_zero");
  PairDataset d;
  d.pairs.push_back({Patch(4, 4, std::vector<float>(16, 0.0f)), Patch(4, 4, std::vector<float>(16, 0.0f)), 1, 0});
  d.pairs.push_back({Patch(4, 4, std::vector<float>(16, 0.0f)), Patch(4, 4, std::vector<float>(16, 0.0f)), 0, 1});
  save_raw(d, dir / "two.smp");
  const auto back = load_dataset(dir / "two.smp", DatasetFormat::RawBinary);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back.pairs[0].label, 1);
  EXPECT_EQ(back.pairs[1].label, 0);
  EXPECT_EQ(back.orientation, LabelOrientation::MatchIsOne);
  EXPECT_EQ(std::filesystem::file_size(dir / "two.smp"), 16u + 2 * (2 * 16 * 4 + 1));
}

TEST(Dataset, RawBinaryRoundTripIsBitExact) {
  const auto dir = testing_support::temp_dir("raw_exact");
  const auto d = make_synthetic_pairs(12, 9, 7, 3);
  save_raw(d, dir / "a.smp");
  const auto back = load_dataset(dir / "a.smp", DatasetFormat::RawBinary);
  ASSERT_EQ(back.size(), d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    EXPECT_EQ(back.pairs[i].a, d.pairs[i].a);
    EXPECT_EQ(back.pairs[i].b, d.pairs[i].b);
    EXPECT_EQ(back.pairs[i].label, d.pairs[i].label);
  }
  save_raw(back, dir / "b.smp");
  std::ifstream fa(dir / "a.smp", std::ios::binary), fb(dir / "b.smp", std::ios::binary);
  const std::string sa((std::istreambuf_iterator<char>(fa)), {}), sb((std::istreambuf_iterator<char>(fb)), {});
  EXPECT_EQ(sa, sb);
}

TEST(Dataset, RawBinaryHeaderIsLittleEndian) {
  const auto dir = testing_support::temp_dir("raw_le");
  save_raw(labelled(3, 1, 2), dir / "x.smp");
  std::ifstream f(dir / "x.smp", std::ios::binary);
  unsigned char h[16];
  f.read(reinterpret_cast<char*>(h), 16);
  EXPECT_EQ(std::string(reinterpret_cast<char*>(h), 4), "SMP1");
  EXPECT_EQ(h[4], 3);
  EXPECT_EQ(h[5] | h[6] | h[7], 0);
  EXPECT_EQ(h[8], 2);
  EXPECT_EQ(h[12], 2);
}

TEST(Dataset, RawBinaryRejectsBrokenFiles) {
  const auto dir = testing_support::temp_dir("raw_bad");
  EXPECT_THROW(load_dataset(dir / "missing.smp", DatasetFormat::RawBinary), DataError);

  save_raw(labelled(2, 1, 2), dir / "ok.smp");
  std::ifstream in(dir / "ok.smp", std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), {});
  auto write = [&](const std::string& name, const std::string& b) {
    std::ofstream(dir / name, std::ios::binary) << b;
    return dir / name;
  };
  EXPECT_THROW(load_dataset(write("trunc.smp", bytes.substr(0, bytes.size() - 3)), DatasetFormat::RawBinary), DataError);
  EXPECT_THROW(load_dataset(write("extra.smp", bytes + "x"), DatasetFormat::RawBinary), DataError);
  std::string magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW(load_dataset(write("magic.smp", magic), DatasetFormat::RawBinary), DataError);
  std::string label = bytes;
  label.back() = 2;
  EXPECT_THROW(load_dataset(write("label.smp", label), DatasetFormat::RawBinary), DataError);
  std::string pixel = bytes;
  const float big = 3.0f;
  std::memcpy(pixel.data() + 16, &big, 4);
  EXPECT_THROW(load_dataset(write("pixel.smp", pixel), DatasetFormat::RawBinary), DataError);
}

TEST(Dataset, FlipLabelsIsAnInvolution) {
  const auto d = labelled(5, 2);
  const auto f = flip_labels(d);
  EXPECT_EQ(f.orientation, LabelOrientation::MatchIsZero);
  for (std::size_t i = 0; i < d.size(); ++i) {
    EXPECT_EQ(f.pairs[i].label, 1 - d.pairs[i].label);
    EXPECT_EQ(f.canonical_label(i), d.canonical_label(i));
  }
  EXPECT_EQ(f.match_count(), d.match_count());
  const auto ff = flip_labels(f);
  EXPECT_EQ(ff.orientation, d.orientation);
  for (std::size_t i = 0; i < d.size(); ++i) EXPECT_EQ(ff.pairs[i].label, d.pairs[i].label);
  EXPECT_EQ(with_orientation(d, LabelOrientation::MatchIsOne).pairs[0].label, d.pairs[0].label);
  EXPECT_EQ(with_orientation(d, LabelOrientation::MatchIsZero).pairs[0].label, f.pairs[0].label);
}

TEST(Dataset, StratifiedSplitOfHundredPairs) {
  const auto d = labelled(100, 50);
  const auto [train, val] = split_validation(d, 0.1, 7);
  EXPECT_EQ(val.size(), 10u);
  EXPECT_NEAR(static_cast<double>(val.match_count()), 5.0, 1.0);
  // Disjoint and exhaustive, in original relative order.
  auto ti = indices(train), vi = indices(val);
  EXPECT_TRUE(std::is_sorted(ti.begin(), ti.end()));
  EXPECT_TRUE(std::is_sorted(vi.begin(), vi.end()));
  std::multiset<std::int64_t> all(ti.begin(), ti.end());
  all.insert(vi.begin(), vi.end());
  const auto want = indices(d);
  EXPECT_EQ(all, std::multiset<std::int64_t>(want.begin(), want.end()));
  EXPECT_EQ(all.size(), std::set<std::int64_t>(all.begin(), all.end()).size());

  const auto [train2, val2] = split_validation(d, 0.1, 7);
  EXPECT_EQ(indices(val2), vi);
  const auto [train3, val3] = split_validation(d, 0.1, 8);
  EXPECT_NE(indices(val3), vi);
}

TEST(Dataset, StratificationHoldsAcrossImbalancedSets) {
  for (std::size_t n : {20u, 57u, 200u, 333u}) {
    for (double frac : {0.1, 0.25, 0.5}) {
      const auto d = labelled(n, n / 3);
      const auto [train, val] = split_validation(d, frac, 1);
      const double p = static_cast<double>(d.match_count()) / d.size();
      const double q = static_cast<double>(val.match_count()) / val.size();
      EXPECT_EQ(train.size() + val.size(), n);
      EXPECT_LE(std::abs(p - q), 0.02 + 1.0 / val.size()) << n << " " << frac;
    }
  }
}

TEST(Dataset, SplitEdgeCases) {
  const auto two = labelled(2, 1);
  const auto [a, b] = split_validation(two, 0.5, 3);
  EXPECT_EQ(a.size(), 1u);
  EXPECT_EQ(b.size(), 1u);
  EXPECT_THROW(split_validation(two, 0.0, 1), ConfigError);
  EXPECT_THROW(split_validation(two, 1.0, 1), ConfigError);
  EXPECT_THROW(split_validation(labelled(1, 1), 0.5, 1), ConfigError);
}

TEST(Dataset, BatchesCoverEveryPairOnce) {
  const auto d = labelled(10, 5);
  const auto plain = batches(d, 4, false, 0);
  ASSERT_EQ(plain.size(), 3u);
  EXPECT_EQ(plain[0], (std::vector<std::size_t>{0, 1, 2, 3}));
  EXPECT_EQ(plain[2], (std::vector<std::size_t>{8, 9}));
  EXPECT_EQ(batches(d, 128, false, 0).size(), 1u);
  EXPECT_EQ(batches(d, 128, false, 0)[0].size(), 10u);

  const auto s1 = batches(d, 3, true, 3, 0);
  EXPECT_EQ(s1, batches(d, 3, true, 3, 0));
  EXPECT_NE(s1, batches(d, 3, true, 3, 1));
  std::vector<std::size_t> flat;
  for (const auto& b : s1) flat.insert(flat.end(), b.begin(), b.end());
  std::sort(flat.begin(), flat.end());
  std::vector<std::size_t> want(10);
  std::iota(want.begin(), want.end(), 0);
  EXPECT_EQ(flat, want);

  EXPECT_THROW(batches(d, 0, false, 0), ConfigError);
  EXPECT_THROW(batches(PairDataset{}, 4, false, 0), DataError);
}

TEST(Dataset, PatchCopiesSharePixels) {
  const auto d = make_synthetic_pairs(4, 8, 8, 1);
  const PairDataset copy = d;
  EXPECT_EQ(copy.pairs[0].a.pixels().data(), d.pairs[0].a.pixels().data());
  const auto sub = d.subset(std::vector<std::size_t>{2, 0}, "sub");
  EXPECT_EQ(sub.pairs[0].index, d.pairs[2].index);
  EXPECT_EQ(sub.split_name, "sub");
}

TEST(Dataset, SyntheticPairsAreValidBalancedAndSeeded) {
  const auto d = make_synthetic_pairs(101, 16, 12, 5);
  EXPECT_EQ(d.size(), 101u);
  EXPECT_EQ(d.match_count(), 50u);
  EXPECT_EQ(d.height(), 16);
  EXPECT_EQ(d.width(), 12);
  EXPECT_NO_THROW(validate_dataset(d));
  const auto again = make_synthetic_pairs(101, 16, 12, 5);
  for (std::size_t i = 0; i < d.size(); ++i) EXPECT_EQ(d.pairs[i].a, again.pairs[i].a);
  EXPECT_FALSE(make_synthetic_pairs(101, 16, 12, 6).pairs[0].a == d.pairs[0].a);
}

TEST(Dataset, ValidateRejectsInconsistentDimensions) {
  auto d = labelled(3, 1, 4);
  d.pairs[1].b = Patch(3, 4, std::vector<float>(12, 0.5f));
  EXPECT_THROW(validate_dataset(d), DataError);
}

TEST(Dataset, OrientationNamesRoundTrip) {
  for (auto o : {LabelOrientation::MatchIsOne, LabelOrientation::MatchIsZero})
    EXPECT_EQ(label_orientation_from_string(to_string(o)), o);
  EXPECT_THROW(label_orientation_from_string("sideways"), ConfigError);
}
