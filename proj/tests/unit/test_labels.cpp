#include <algorithm>
#include <array>
#include <cmath>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "repsim/error.hpp"
#include "repsim/labels.hpp"
#include "repsim/rng.hpp"

using namespace repsim;
using namespace repsim::labels;

TEST(RandomizeLabels, ZeroNoiseIsIdentity) {
  const nn::Labels y = {3, 7, 1};
  EXPECT_EQ(randomize_labels(y, 0, 10, 123), y);
  nn::Labels many(5000);
  for (std::size_t i = 0; i < many.size(); ++i) many[i] = static_cast<std::int32_t>((i * 7) % 10);
  EXPECT_EQ(randomize_labels(many, 0, 10, 9), many);
}

TEST(RandomizeLabels, OffsetsStayWithinZeroToD) {
  const nn::Labels y(2000, 8);
  const nn::Labels out = randomize_labels(y, 3, 10, 4);
  std::array<int, 10> seen{};
  for (std::int32_t v : out) ++seen[static_cast<std::size_t>(v)];
  for (int v : {2, 3, 4, 5, 6, 7}) EXPECT_EQ(seen[v], 0);
  for (int v : {8, 9, 0, 1}) EXPECT_GT(seen[v], 0);  // Y = 3 takes 8 to (8 + 3) mod 10 = 1
  EXPECT_EQ(y, nn::Labels(2000, 8));
}

TEST(RandomizeLabels, FullNoiseMarginalIsUniform) {
  nn::Labels y(100000);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<std::int32_t>(i % 10);
  const nn::Labels out = randomize_labels(y, 9, 10, 77);
  std::array<double, 10> counts{};
  for (std::int32_t v : out) counts[static_cast<std::size_t>(v)] += 1.0;
  for (double c : counts) EXPECT_NEAR(c / 1e5, 0.1, 0.003);
}

TEST(RandomizeLabels, SeededAndIndependentAcrossSeeds) {
  nn::Labels y(1000, 0);
  EXPECT_EQ(randomize_labels(y, 5, 10, 1), randomize_labels(y, 5, 10, 1));
  EXPECT_NE(randomize_labels(y, 5, 10, 1), randomize_labels(y, 5, 10, 2));
}

TEST(RandomizeLabels, UnchangedFraction) {
  nn::Labels y(100000);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<std::int32_t>(i % 10);
  for (int d = 0; d < 10; ++d) {
    const nn::Labels out = randomize_labels(y, d, 10, derive_seed(5, "unchanged", d));
    double same = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) same += out[i] == y[i];
    const double p = 1.0 / (d + 1);
    EXPECT_NEAR(same / 1e5, p, 3.0 * std::sqrt(p * (1 - p) / 1e5) + 1e-12) << "d=" << d;
  }
}

TEST(RandomizeLabels, OffsetDistributionChiSquare) {
  nn::Labels y(1000000);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<std::int32_t>(i % 10);
  for (int d : {1, 4, 9}) {
    const nn::Labels out = randomize_labels(y, d, 10, derive_seed(6, "chi", d));
    std::vector<double> counts(static_cast<std::size_t>(d) + 1, 0.0);
    for (std::size_t i = 0; i < y.size(); ++i) {
      const int k = (out[i] - y[i] + 10) % 10;
      ASSERT_LE(k, d);
      counts[static_cast<std::size_t>(k)] += 1.0;
    }
    const std::vector<double> expected(counts.size(), 1e6 / (d + 1));
    EXPECT_LT(oracle::chi_square(counts, expected), oracle::chi_square_quantile(0.999, d)) << "d=" << d;
  }
}

TEST(RandomizeLabels, RejectsOutOfRange) {
  const nn::Labels y = {1, 2};
  EXPECT_THROW(randomize_labels(y, 10, 10, 0), ConfigError);
  EXPECT_THROW(randomize_labels(y, -1, 10, 0), ConfigError);
  EXPECT_THROW(randomize_labels(nn::Labels{10}, 1, 10, 0), ConfigError);
}

TEST(ShiftLabels, Arithmetic) {
  EXPECT_EQ(shift_labels(nn::Labels{3, 9}, 1, 10), (nn::Labels{4, 0}));
}

TEST(ShiftLabels, InverseAndBijection) {
  nn::Labels y(1000);
  Rng rng(8);
  for (auto& v : y) v = static_cast<std::int32_t>(rng.below(10));
  for (int s = 1; s < 10; ++s) {
    const nn::Labels shifted = shift_labels(y, s, 10);
    EXPECT_EQ(shift_labels(shifted, 10 - s, 10), y);
    std::array<int, 10> before{}, after{};
    for (std::size_t i = 0; i < y.size(); ++i) {
      ++before[static_cast<std::size_t>(y[i])];
      ++after[static_cast<std::size_t>(shifted[i])];
      EXPECT_NE(shifted[i], y[i]);
    }
    for (int c = 0; c < 10; ++c) EXPECT_EQ(after[static_cast<std::size_t>((c + s) % 10)], before[c]);
  }
}

TEST(ShiftLabels, RejectsOutOfRange) {
  EXPECT_THROW(shift_labels(nn::Labels{1}, 0, 10), ConfigError);
  EXPECT_THROW(shift_labels(nn::Labels{1}, 10, 10), ConfigError);
}

TEST(LabelTransform, ParseAndFormat) {
  for (const std::string text : {"identity", "random:0", "random:9", "shift:1", "shift:9"}) {
    EXPECT_EQ(to_string(parse_transform(text)), text);
  }
  EXPECT_EQ(parse_transform("random:3"), LabelTransform::partial_random(3));
  EXPECT_THROW(parse_transform("random"), ConfigError);
  EXPECT_THROW(parse_transform("random:x"), ConfigError);
  EXPECT_THROW(parse_transform("flip:1"), ConfigError);
  EXPECT_THROW(LabelTransform::shift(0).validate(10), ConfigError);
  EXPECT_THROW(LabelTransform::partial_random(10).validate(10), ConfigError);
  EXPECT_NO_THROW(LabelTransform::partial_random(9).validate(10));
}

TEST(LabelTransform, ApplyDispatches) {
  const nn::Labels y = {0, 5, 9};
  EXPECT_EQ(apply(LabelTransform::identity(), y, 10, 0), y);
  EXPECT_EQ(apply(LabelTransform::shift(2), y, 10, 0), (nn::Labels{2, 7, 1}));
  EXPECT_EQ(apply(LabelTransform::partial_random(4), y, 10, 3), randomize_labels(y, 4, 10, 3));
}
