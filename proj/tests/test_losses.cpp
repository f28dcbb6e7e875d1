#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "sonarmatch/losses.hpp"

using namespace sonarmatch;

TEST(Losses, EuclideanDistance) {
  const std::vector<double> o{0, 0}, p{3, 4};
  EXPECT_EQ(euclidean_distance<double>(o, p), 5.0);
  EXPECT_EQ(euclidean_distance<double>(p, o), 5.0);
  EXPECT_EQ(euclidean_distance<double>(p, p), 0.0);
  const std::vector<double> three{1, 2, 3};
  EXPECT_THROW(euclidean_distance<double>(o, three), ConfigError);
}

TEST(Losses, DistanceGradientIsFiniteAtZero) {
  const std::vector<double> e{0.5, -1.0};
  std::vector<double> g(2);
  euclidean_distance_grad<double>(e, e, g);
  EXPECT_EQ(g[0], 0.0);
  EXPECT_EQ(g[1], 0.0);
  const std::vector<double> a{3, 4}, b{0, 0};
  euclidean_distance_grad<double>(a, b, g);
  EXPECT_NEAR(g[0], 0.6, 1e-12);
  EXPECT_NEAR(g[1], 0.8, 1e-12);
}

TEST(Losses, ContrastiveValues) {
  EXPECT_EQ(contrastive_loss(0.5, 0), 0.125);
  EXPECT_EQ(contrastive_loss(1.5, 1), 0.0);
  EXPECT_EQ(contrastive_loss(0.4, 1), 0.5 * (1.0 - 0.4) * (1.0 - 0.4));
  EXPECT_NEAR(contrastive_loss(0.4, 1), 0.18, 1e-15);
  EXPECT_EQ(contrastive_loss(1.0, 1), 0.0);
  EXPECT_EQ(contrastive_loss(0.0, 0), 0.0);
  EXPECT_EQ(contrastive_loss(1.0, 1, ContrastiveConfig{2.0}), 0.5);
  EXPECT_THROW(contrastive_loss(-0.1, 0), ConfigError);
  EXPECT_THROW(contrastive_loss(0.1, 2), ConfigError);
  EXPECT_THROW(contrastive_loss(0.1, 0, ContrastiveConfig{0.0}), ConfigError);
}

TEST(Losses, ContrastiveZeroSet) {
  for (double d : {0.0, 0.2, 0.999, 1.0, 1.7})
    for (int y : {0, 1}) {
      const double l = contrastive_loss(d, y);
      EXPECT_GE(l, 0.0);
      EXPECT_EQ(l == 0.0, (y == 0 && d == 0.0) || (y == 1 && d >= 1.0)) << d << " " << y;
    }
}

TEST(Losses, ContrastiveBatch) {
  const std::vector<double> d{0.5, 0.4};
  const std::vector<int> y{0, 1};
  EXPECT_NEAR((contrastive_batch<double, int>(d, y)), 0.1525, 1e-15);
  const std::vector<double> one{0.7};
  const std::vector<int> one_y{1};
  EXPECT_EQ((contrastive_batch<double, int>(one, one_y)), contrastive_loss(0.7, 1));
  const std::vector<double> zeros(5, 0.0);
  const std::vector<int> zero_y(5, 0);
  EXPECT_EQ((contrastive_batch<double, int>(zeros, zero_y)), 0.0);
  EXPECT_THROW((contrastive_batch<double, int>({}, {})), ConfigError);
  EXPECT_THROW(((contrastive_batch<double, int>(d, one_y))), ConfigError);
}

TEST(Losses, ContrastiveBatchIsPermutationInvariant) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 2.0);
  std::vector<double> d(50);
  std::vector<int> y(50);
  for (int i = 0; i < 50; ++i) {
    d[i] = u(rng);
    y[i] = i % 3 == 0;
  }
  const double ref = (contrastive_batch<double, int>(d, y));
  std::vector<int> perm(50);
  std::iota(perm.begin(), perm.end(), 0);
  for (int trial = 0; trial < 10; ++trial) {
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> d2;
    std::vector<int> y2;
    for (int i : perm) {
      d2.push_back(d[i]);
      y2.push_back(y[i]);
    }
    EXPECT_NEAR((contrastive_batch<double, int>(d2, y2)), ref, 1e-15);
  }
}

TEST(Losses, ContrastiveGradientMatchesFiniteDifferences) {
  for (double d : {0.1, 0.5, 0.9, 1.5})
    for (int y : {0, 1}) {
      const double h = 1e-6;
      const double numeric = (contrastive_loss(d + h, y) - contrastive_loss(d - h, y)) / (2 * h);
      const double analytic = contrastive_loss_grad(d, y);
      EXPECT_LE(std::abs(numeric - analytic), 1e-6 * std::max(1e-3, std::abs(analytic))) << d << " " << y;
    }
  EXPECT_EQ(contrastive_loss_grad(1.0, 1), 0.0);
}

TEST(Losses, BinaryCrossEntropy) {
  EXPECT_NEAR(binary_cross_entropy(0.5, 1), std::log(2.0), 1e-15);
  EXPECT_NEAR(binary_cross_entropy(0.9, 0), -std::log(0.1), 1e-12);
  EXPECT_NEAR(binary_cross_entropy(1.0, 1), -std::log(1.0 - 1e-7), 1e-15);
  EXPECT_TRUE(std::isfinite(binary_cross_entropy(0.0, 1)));
  EXPECT_NEAR(binary_cross_entropy(0.0, 1), -std::log(1e-7), 1e-9);
  double prev1 = 1e9, prev0 = -1;
  for (double p = 0.01; p < 1.0; p += 0.01) {
    EXPECT_LT(binary_cross_entropy(p, 1), prev1);
    EXPECT_GT(binary_cross_entropy(p, 0), prev0);
    prev1 = binary_cross_entropy(p, 1);
    prev0 = binary_cross_entropy(p, 0);
  }
}

TEST(Losses, BinaryCrossEntropyGradient) {
  for (double p : {0.05, 0.3, 0.5, 0.8, 0.97})
    for (int y : {0, 1}) {
      const double h = 1e-7;
      const double numeric = (binary_cross_entropy(p + h, y) - binary_cross_entropy(p - h, y)) / (2 * h);
      EXPECT_NEAR(binary_cross_entropy_grad(p, y), numeric, 1e-6 * std::abs(numeric));
    }
  EXPECT_EQ(binary_cross_entropy_grad(0.0, 1), 0.0);
  EXPECT_EQ(binary_cross_entropy_grad(1.0, 0), 0.0);
}
