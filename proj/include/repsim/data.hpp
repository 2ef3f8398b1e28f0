#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "repsim/layers.hpp"
#include "repsim/tensor.hpp"

namespace repsim {

/// Header of the canonical "RSDS" dataset file. Layout (little-endian):
///
///   "RSDS" | u16 version = 1 | u32 N, C, H, W, D | f64 mean[3] | f64 std[3]
///   then N records of [u8 label][C*H*W u8 pixels, channel-planar, row-major]
///
/// Channel statistics are in [0, 1] pixel units.
struct RsdsHeader {
  std::uint32_t count = 0;
  std::uint32_t channels = 3;
  std::uint32_t height = 32;
  std::uint32_t width = 32;
  std::uint32_t num_classes = 10;
  std::array<double, 3> mean{};
  std::array<double, 3> std{};

  std::size_t record_pixels() const { return std::size_t{channels} * height * width; }
};

inline constexpr std::size_t kRsdsHeaderBytes = 4 + 2 + 5 * 4 + 6 * 8;

/// Undecoded file content: raw labels and 0..255 pixels.
struct RawDataset {
  RsdsHeader header;
  std::vector<std::uint8_t> labels;
  std::vector<std::uint8_t> pixels;  // count * record_pixels
};

std::string encode_rsds(const RawDataset& raw);
RawDataset decode_rsds(std::string_view bytes);
void write_rsds(const RawDataset& raw, const std::filesystem::path& path);

/// Per-channel mean and population standard deviation of pixels / 255.
std::pair<std::array<double, 3>, std::array<double, 3>> channel_statistics(const RawDataset& raw);

/// Decoded, normalized dataset held in memory.
struct Dataset {
  std::string name;
  std::string split;
  std::size_t num_classes = 10;
  Tensor images;      // N x C x H x W, normalized
  nn::Labels labels;  // length N
  std::string header_sha256;

  std::size_t size() const { return labels.size(); }
  Tensor gather(std::span<const std::size_t> indices) const;
  nn::Labels gather_labels(std::span<const std::size_t> indices) const;
  Dataset subset(std::span<const std::size_t> indices, std::string split_tag) const;
};

/// Pixels / 255, then (x - mean[c]) / std[c] with the header statistics.
Dataset decode_dataset(const RawDataset& raw, std::string name, std::string split);
Dataset load_dataset(const std::filesystem::path& path, const std::string& expected_name,
                     const std::string& split = "");

/// Concatenates datasets with equal geometry and class count (e.g. a train
/// and a test file of the same source).
Dataset concat(const Dataset& first, const Dataset& second, std::string split_tag);

/// Disjoint seeded uniform sample without replacement.
std::pair<Dataset, Dataset> take_split(const Dataset& dataset, std::size_t n_train, std::size_t n_test,
                                       std::uint64_t seed);

using BatchIndices = std::vector<std::size_t>;

/// Fresh permutation per (seed, epoch), cut into batches; the last batch may be short.
std::vector<BatchIndices> batches(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed,
                                  std::uint64_t epoch);
inline std::vector<BatchIndices> batches(const Dataset& dataset, std::size_t batch_size, std::uint64_t seed,
                                         std::uint64_t epoch) {
  return batches(dataset.size(), batch_size, seed, epoch);
}

/// Fixed inputs on which representations are compared.
struct ProbeSet {
  std::string source;  // dataset name/split the probe was drawn from
  std::uint64_t seed = 0;
  std::vector<std::size_t> indices;
  Tensor images;

  std::size_t size() const { return indices.size(); }
  /// Identity string; equal identities mean identical probe inputs.
  std::string identity() const;
};

ProbeSet make_probe(const Dataset& dataset, std::size_t n_probe, std::uint64_t seed);

std::string sha256_hex(std::string_view bytes);

}  // namespace repsim
