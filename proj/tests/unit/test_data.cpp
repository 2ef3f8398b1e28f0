#include <algorithm>
#include <cmath>
#include <filesystem>
#include <cstring>
#include <set>

#include <gtest/gtest.h>

#include "repsim/container.hpp"
#include "repsim/data.hpp"
#include "repsim/error.hpp"
#include "repsim/synthetic.hpp"

using namespace repsim;

namespace {

const std::filesystem::path kFixture = std::filesystem::path(REPSIM_FIXTURE_DIR) / "synthetic200.rsds";

// Records of 3 x 1 x 1 pixels whose bytes spell the record index, so a
// sampled subset can be traced back to its source rows.
Dataset indexed_dataset(std::size_t n) {
  RawDataset raw;
  raw.header.count = static_cast<std::uint32_t>(n);
  raw.header.height = 1;
  raw.header.width = 1;
  raw.header.mean = {0.0, 0.0, 0.0};
  raw.header.std = {1.0, 1.0, 1.0};
  for (std::size_t i = 0; i < n; ++i) {
    raw.labels.push_back(static_cast<std::uint8_t>(i % 10));
    raw.pixels.push_back(static_cast<std::uint8_t>(i % 256));
    raw.pixels.push_back(static_cast<std::uint8_t>((i / 256) % 256));
    raw.pixels.push_back(static_cast<std::uint8_t>(i / 65536));
  }
  return decode_dataset(raw, "indexed", "all");
}

std::vector<std::size_t> source_rows(const Dataset& ds) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    std::size_t index = 0, scale = 1;
    for (std::size_t c = 0; c < 3; ++c, scale *= 256) {
      index += static_cast<std::size_t>(std::lround(ds.images[i * 3 + c] * 255.0)) * scale;
    }
    rows.push_back(index);
  }
  return rows;
}

RawDataset three_records() {
  RawDataset raw = synthetic::generate(synthetic::Family::objects, 3, 5);
  return raw;
}

}  // namespace

TEST(Rsds, FixtureLoadsWithHeaderStatistics) {
  const Dataset ds = load_dataset(kFixture, "fixture", "all");
  ASSERT_EQ(ds.size(), 200u);
  EXPECT_EQ(ds.num_classes, 10u);
  EXPECT_EQ(ds.images.shape(), (Shape{200, 3, 32, 32}));
  for (std::int32_t y : ds.labels) EXPECT_LT(y, 10);
  EXPECT_TRUE(ds.images.all_finite());
  // Header statistics derive from this file, so normalized channels are standardized.
  for (std::size_t c = 0; c < 3; ++c) {
    double s = 0.0, ss = 0.0;
    for (std::size_t i = 0; i < 200; ++i) {
      for (std::size_t k = 0; k < 1024; ++k) {
        const double v = ds.images[(i * 3 + c) * 1024 + k];
        s += v;
        ss += v * v;
      }
    }
    const double n = 200.0 * 1024.0;
    EXPECT_LE(std::abs(s / n), 1e-6);
    EXPECT_NEAR(ss / n - (s / n) * (s / n), 1.0, 1e-3);
  }
  EXPECT_EQ(ds.header_sha256.size(), 64u);
}

TEST(Rsds, ByteLayout) {
  const RawDataset raw = three_records();
  const std::string bytes = encode_rsds(raw);
  ASSERT_EQ(bytes.size(), kRsdsHeaderBytes + 3 * 3073);
  EXPECT_EQ(bytes.substr(0, 4), "RSDS");
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[5], 0);
  EXPECT_EQ(static_cast<unsigned char>(bytes[6]), 3);  // N, little-endian u32
  EXPECT_EQ(static_cast<unsigned char>(bytes[10]), 3);  // C
  EXPECT_EQ(static_cast<unsigned char>(bytes[14]), 32);  // H
  EXPECT_EQ(static_cast<unsigned char>(bytes[18]), 32);  // W
  EXPECT_EQ(static_cast<unsigned char>(bytes[22]), 10);  // D
  double mean0 = 0.0;
  std::memcpy(&mean0, bytes.data() + 26, 8);
  EXPECT_EQ(mean0, raw.header.mean[0]);
  EXPECT_EQ(static_cast<unsigned char>(bytes[kRsdsHeaderBytes]), raw.labels[0]);
  EXPECT_EQ(static_cast<unsigned char>(bytes[kRsdsHeaderBytes + 1]), raw.pixels[0]);
}

TEST(Rsds, RoundTripOfThreeRecords) {
  const RawDataset raw = three_records();
  const auto path = std::filesystem::temp_directory_path() / "repsim_test_three.rsds";
  write_rsds(raw, path);
  const Dataset loaded = load_dataset(path, "three");
  const Dataset direct = decode_dataset(raw, "three", "");
  EXPECT_EQ(loaded.images, direct.images);
  EXPECT_EQ(loaded.labels, direct.labels);
  const RawDataset again = decode_rsds(read_file(path));
  EXPECT_EQ(again.labels, raw.labels);
  EXPECT_EQ(again.pixels, raw.pixels);
  EXPECT_EQ(again.header.mean, raw.header.mean);
  std::filesystem::remove(path);
}

TEST(Rsds, RejectsOutOfRangeLabelWithPosition) {
  std::string bytes = encode_rsds(three_records());
  bytes[kRsdsHeaderBytes + 3073] = 10;
  try {
    decode_rsds(bytes);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("record 1"), std::string::npos) << msg;
    EXPECT_NE(msg.find("byte"), std::string::npos) << msg;
  }
}

TEST(Rsds, RejectsBadMagicVersionAndTruncation) {
  const std::string good = encode_rsds(three_records());
  std::string bad = good;
  bad[0] = 'X';
  EXPECT_THROW(decode_rsds(bad), FormatError);
  bad = good;
  bad[4] = 2;
  EXPECT_THROW(decode_rsds(bad), FormatError);
  EXPECT_THROW(decode_rsds(good.substr(0, good.size() - 1)), FormatError);
  EXPECT_THROW(decode_rsds(good.substr(0, 20)), FormatError);
  EXPECT_THROW(decode_rsds(good + "x"), FormatError);
  EXPECT_THROW(load_dataset("/nonexistent/cifar10_train.rsds", "cifar10"), Error);
}

TEST(Rsds, ChannelStatisticsArePopulationMoments) {
  RawDataset raw;
  raw.header.count = 2;
  raw.header.height = 1;
  raw.header.width = 2;
  raw.labels = {0, 1};
  raw.pixels = {0, 255, 51, 51, 102, 102, 255, 255, 0, 0, 0, 0};
  const auto [mean, std] = channel_statistics(raw);
  EXPECT_NEAR(mean[0], (0 + 1 + 1 + 1) / 4.0, 1e-15);
  EXPECT_NEAR(std[0], std::sqrt(3.0) / 4.0, 1e-15);
  EXPECT_NEAR(mean[1], 0.1, 1e-15);
  EXPECT_NEAR(mean[2], 0.2, 1e-15);
}

TEST(TakeSplit, ExactPartitionOfTenThousand) {
  const Dataset ds = indexed_dataset(10000);
  const auto [train, test] = take_split(ds, 5000, 5000, 42);
  ASSERT_EQ(train.size(), 5000u);
  ASSERT_EQ(test.size(), 5000u);
  std::vector<std::size_t> all = source_rows(train);
  const std::vector<std::size_t> t = source_rows(test);
  all.insert(all.end(), t.begin(), t.end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < all.size(); ++i) ASSERT_EQ(all[i], i);
}

TEST(TakeSplit, WholeSetIsAPermutation) {
  const Dataset ds = indexed_dataset(300);
  const auto [train, test] = take_split(ds, 300, 0, 1);
  EXPECT_EQ(test.size(), 0u);
  std::vector<std::size_t> rows = source_rows(train);
  EXPECT_NE(rows, source_rows(ds));
  std::sort(rows.begin(), rows.end());
  EXPECT_EQ(rows, source_rows(ds));
  for (std::size_t i = 0; i < train.size(); ++i) EXPECT_EQ(train.labels[i], static_cast<int>(source_rows(train)[i] % 10));
}

TEST(TakeSplit, DeterministicAndDisjointOverSeeds) {
  const Dataset ds = indexed_dataset(500);
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    const auto a = take_split(ds, 120, 80, seed);
    const auto b = take_split(ds, 120, 80, seed);
    EXPECT_EQ(source_rows(a.first), source_rows(b.first));
    EXPECT_EQ(source_rows(a.second), source_rows(b.second));
    std::set<std::size_t> seen;
    for (std::size_t r : source_rows(a.first)) seen.insert(r);
    for (std::size_t r : source_rows(a.second)) seen.insert(r);
    EXPECT_EQ(seen.size(), 200u);
  }
  EXPECT_NE(source_rows(take_split(ds, 120, 80, 0).first), source_rows(take_split(ds, 120, 80, 1).first));
}

TEST(TakeSplit, RejectsInsufficientRecords) {
  const Dataset ds = indexed_dataset(100);
  EXPECT_THROW(take_split(ds, 60, 41, 0), ShapeError);
  EXPECT_THROW(take_split(ds, 0, 10, 0), ShapeError);
}

TEST(Batches, SizesAndShortLastBatch) {
  const auto b = batches(10, 4, 0, 0);
  ASSERT_EQ(b.size(), 3u);
  EXPECT_EQ(b[0].size(), 4u);
  EXPECT_EQ(b[1].size(), 4u);
  EXPECT_EQ(b[2].size(), 2u);
  EXPECT_THROW(batches(10, 0, 0, 0), ShapeError);
}

TEST(Batches, PermutationPerSeedAndEpoch) {
  EXPECT_EQ(batches(1000, 64, 3, 5), batches(1000, 64, 3, 5));
  EXPECT_NE(batches(1000, 64, 3, 0), batches(1000, 64, 3, 1));
  EXPECT_NE(batches(1000, 64, 3, 0), batches(1000, 64, 4, 0));
  std::vector<std::size_t> flat;
  for (const auto& batch : batches(1000, 64, 3, 0)) flat.insert(flat.end(), batch.begin(), batch.end());
  std::sort(flat.begin(), flat.end());
  for (std::size_t i = 0; i < flat.size(); ++i) ASSERT_EQ(flat[i], i);
}

TEST(Probe, DeterministicWithoutDuplicates) {
  const Dataset ds = indexed_dataset(400);
  const ProbeSet a = make_probe(ds, 64, 9);
  const ProbeSet b = make_probe(ds, 64, 9);
  EXPECT_EQ(a.indices, b.indices);
  EXPECT_EQ(a.identity(), b.identity());
  EXPECT_EQ(a.images, b.images);
  EXPECT_EQ(std::set<std::size_t>(a.indices.begin(), a.indices.end()).size(), 64u);
  EXPECT_NE(a.identity(), make_probe(ds, 64, 10).identity());
  EXPECT_THROW(make_probe(ds, 401, 0), ShapeError);
}

TEST(Dataset, ConcatKeepsOrder) {
  const Dataset a = indexed_dataset(5);
  const Dataset joined = concat(a, a, "both");
  EXPECT_EQ(joined.size(), 10u);
  EXPECT_EQ(source_rows(joined), (std::vector<std::size_t>{0, 1, 2, 3, 4, 0, 1, 2, 3, 4}));
}

TEST(Synthetic, DeterministicPerRecord) {
  const RawDataset a = synthetic::generate(synthetic::Family::digits, 20, 3);
  const RawDataset b = synthetic::generate(synthetic::Family::digits, 20, 3);
  EXPECT_EQ(a.pixels, b.pixels);
  EXPECT_EQ(a.labels, b.labels);
  const RawDataset longer = synthetic::generate(synthetic::Family::digits, 30, 3);
  EXPECT_TRUE(std::equal(a.pixels.begin(), a.pixels.end(), longer.pixels.begin()));
  EXPECT_NE(a.pixels, synthetic::generate(synthetic::Family::objects, 20, 3).pixels);
}
