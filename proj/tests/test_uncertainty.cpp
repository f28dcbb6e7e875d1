#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "sonarmatch/error.hpp"
#include "sonarmatch/uncertainty.hpp"
#include "support.hpp"

using namespace sonarmatch;

namespace {

constexpr int kSize = 16;

Model small_dtc(double dropout = 0.3) {
  nlohmann::json c = {{"input_height", kSize}, {"input_width", kSize}, {"block_layers", {1, 1}},
                      {"growth", 6},           {"initial_filters", 8},  {"dropout", dropout}};
  Model m(build_model(ArchId::DTC, c));
  m.network().initialize(17);
  return m;
}

Model small_vgg() {
  nlohmann::json c = {{"input_height", kSize}, {"input_width", kSize}, {"base_filters", 4},
                      {"conv_blocks", {1, 1}}, {"embedding_units", 16}};
  Model m(build_model(ArchId::VGG_CL, c));
  m.network().initialize(17);
  return m;
}

std::uint32_t be32(const unsigned char* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) | (std::uint32_t(p[2]) << 8) | p[3];
}

}  // namespace

TEST(McDropout, ZeroRateGivesZeroStd) {
  const auto d = make_synthetic_pairs(12, kSize, kSize, 1);
  const Model m = with_dropout(small_dtc(), 0.0);
  McOptions opt;
  opt.passes = 5;
  EXPECT_THROW(mc_dropout_scores(m, d, opt), ConfigError);
  opt.allow_zero_rate = true;
  const auto r = mc_dropout_scores(m, d, opt);
  ASSERT_EQ(r.entries.size(), d.size());
  auto copy = m;
  const auto plain = copy.predict(d);
  for (std::size_t i = 0; i < d.size(); ++i) {
    EXPECT_EQ(r.entries[i].std, 0.0);
    EXPECT_EQ(r.entries[i].mean, plain[i]);
    EXPECT_EQ(r.entries[i].samples, 5);
    EXPECT_EQ(r.entries[i].index, d.pairs[i].index);
  }
}

TEST(McDropout, FixedPassSeedGivesZeroStd) {
  const auto d = make_synthetic_pairs(10, kSize, kSize, 2);
  McOptions opt;
  opt.passes = 4;
  opt.fixed_pass_seed = 99;
  for (const auto& e : mc_dropout_scores(small_dtc(), d, opt).entries) EXPECT_EQ(e.std, 0.0);
}

TEST(McDropout, PassesDiffer) {
  const auto d = make_synthetic_pairs(10, kSize, kSize, 2);
  McOptions opt;
  opt.passes = 6;
  const auto r = mc_dropout_scores(small_dtc(0.5), d, opt);
  int positive = 0;
  for (const auto& e : r.entries) positive += e.std > 0.0;
  EXPECT_EQ(positive, 10);
  EXPECT_NE(mc_pass_seed(0, 0), mc_pass_seed(0, 1));
  EXPECT_NE(mc_pass_seed(0, 0), mc_pass_seed(1, 0));
}

TEST(McDropout, ThreadCountDoesNotChangeResults) {
  const auto d = make_synthetic_pairs(20, kSize, kSize, 3);
  for (const Model& m : {small_dtc(), small_vgg()}) {
    McOptions opt;
    opt.passes = 7;
    opt.seed = 4;
    const auto serial = mc_dropout_samples(m, d, opt);
    opt.threads = 3;
    EXPECT_EQ(mc_dropout_samples(m, d, opt), serial);
    opt.threads = 0;
    EXPECT_EQ(mc_dropout_samples(m, d, opt), serial);
  }
}

TEST(McDropout, MasksDoNotDependOnChunking) {
  const auto d = make_synthetic_pairs(9, kSize, kSize, 3);
  auto m = small_dtc();
  EXPECT_EQ(m.predict(d, Mode::McDropout, 5, 2), m.predict(d, Mode::McDropout, 5, 64));
  EXPECT_NE(m.predict(d, Mode::McDropout, 5), m.predict(d, Mode::McDropout, 6));
}

TEST(McDropout, RejectsTooFewPasses) {
  const auto d = make_synthetic_pairs(4, kSize, kSize, 3);
  McOptions opt;
  opt.passes = 1;
  EXPECT_THROW(mc_dropout_scores(small_dtc(), d, opt), ConfigError);
  EXPECT_THROW(with_dropout(small_dtc(), 1.0), ConfigError);
}

TEST(McSummary, MatchesDirectStatistics) {
  const auto d = make_synthetic_pairs(30, 4, 4, 3);
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<std::vector<double>> samples(13, std::vector<double>(30));
  for (auto& pass : samples)
    for (auto& v : pass) v = u(rng);
  const auto r = summarize_samples(samples, d, ScoreOrientation::HigherIsMatch);
  for (std::size_t i = 0; i < 30; ++i) {
    long double s = 0, s2 = 0, lo = 1e9, hi = -1e9;
    for (const auto& pass : samples) {
      s += pass[i];
      lo = std::min<long double>(lo, pass[i]);
      hi = std::max<long double>(hi, pass[i]);
    }
    const long double mean = s / 13;
    for (const auto& pass : samples) s2 += (pass[i] - mean) * (pass[i] - mean);
    EXPECT_NEAR(r.entries[i].mean, static_cast<double>(mean), 1e-14);
    EXPECT_NEAR(r.entries[i].std, static_cast<double>(std::sqrt(s2 / 13)), 1e-14);
    EXPECT_GE(r.entries[i].mean, static_cast<double>(lo));
    EXPECT_LE(r.entries[i].mean, static_cast<double>(hi));
  }
  auto shuffled = samples;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  const auto r2 = summarize_samples(shuffled, d, ScoreOrientation::HigherIsMatch);
  for (std::size_t i = 0; i < 30; ++i) {
    EXPECT_EQ(r2.entries[i].mean, r.entries[i].mean);
    EXPECT_EQ(r2.entries[i].std, r.entries[i].std);
  }
  std::vector<std::vector<double>> constant(5, std::vector<double>(30, 0.1));
  for (const auto& e : summarize_samples(constant, d, ScoreOrientation::HigherIsMatch).entries) {
    EXPECT_EQ(e.mean, 0.1);
    EXPECT_EQ(e.std, 0.0);
  }
}

TEST(McSummary, MoreSamplesConverge) {
  const auto d = make_synthetic_pairs(16, kSize, kSize, 5);
  const Model m = small_dtc(0.5);
  McOptions opt;
  opt.seed = 1;
  opt.passes = 200;
  const auto ref = mc_dropout_scores(m, d, opt);
  opt.seed = 2;
  opt.passes = 20;
  const auto few = mc_dropout_scores(m, d, opt);
  int within = 0;
  for (std::size_t i = 0; i < d.size(); ++i)
    within += std::abs(few.entries[i].mean - ref.entries[i].mean) <= 4 * ref.entries[i].std / std::sqrt(20.0) + 1e-9;
  EXPECT_GE(within, 15);
}

TEST(McRanking, OrdersByStdWithIndexTies) {
  McResult r;
  r.entries = {{10, 0.5, 0.1, 2}, {11, 0.5, 0.3, 2}, {12, 0.5, 0.1, 2}, {13, 0.5, 0.0, 2}};
  EXPECT_EQ(rank_by_std(r, 2, RankDirection::Highest), (std::vector<std::int64_t>{11, 10}));
  EXPECT_EQ(rank_by_std(r, 3, RankDirection::Lowest), (std::vector<std::int64_t>{13, 10, 12}));
  EXPECT_EQ(rank_by_std(r, 99, RankDirection::Highest).size(), 4u);
  EXPECT_TRUE(rank_by_std(r, 0, RankDirection::Lowest).empty());
}

TEST(McOutput, CsvAndThumbnails) {
  const auto dir = testing_support::temp_dir("mc_out");
  McResult r;
  r.entries = {{3, 0.25, 0.125, 2}, {7, 0.75, 0.0, 2}};
  write_mc_csv(r, dir / "mc.csv");
  std::ifstream f(dir / "mc.csv");
  std::string line;
  std::getline(f, line);
  EXPECT_EQ(line, "index,mean,std");
  std::getline(f, line);
  EXPECT_EQ(line.substr(0, 2), "3,");
  int rows = 1;
  while (std::getline(f, line)) rows += !line.empty();
  EXPECT_EQ(rows, 2);

  const auto d = make_synthetic_pairs(5, 12, 10, 1);
  const std::vector<std::int64_t> pick{d.pairs[4].index, d.pairs[1].index};
  write_thumbnails(d, pick, dir / "t.png");
  std::ifstream png(dir / "t.png", std::ios::binary);
  unsigned char head[24];
  png.read(reinterpret_cast<char*>(head), 24);
  ASSERT_TRUE(png);
  EXPECT_EQ(std::string(reinterpret_cast<char*>(head + 1), 3), "PNG");
  EXPECT_GT(be32(head + 16), 20u);  // two patches side by side
  EXPECT_GE(be32(head + 20), 24u);  // two rows
  const std::vector<std::int64_t> unknown{12345};
  EXPECT_THROW(write_thumbnails(d, unknown, dir / "u.png"), DataError);
}
