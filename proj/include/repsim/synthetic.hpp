#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "repsim/data.hpp"

// Procedurally generated stand-ins for the two natural-image sources, in the
// canonical RSDS layout. Useful wherever the real archives are unavailable.
namespace repsim::synthetic {

enum class Family {
  objects,  // soft blobs filled with class-specific oriented gratings (stand-in for "cifar10")
  digits,   // seven-segment glyphs with distractor neighbours (stand-in for "svhn")
};

std::string to_string(Family family);

/// `count` 32x32 RGB records, labels cycling 0..9. Record i depends only on
/// (family, seed, i). Header statistics are computed on the generated pixels.
RawDataset generate(Family family, std::size_t count, std::uint64_t seed);

struct SuiteSizes {
  // Enough for every reduced-scale pipeline (5000/5000 fine-tuning splits).
  std::size_t objects_train = 10000;
  std::size_t objects_test = 10000;
  std::size_t digits_train = 5000;
  std::size_t digits_test = 5000;
};

/// Writes cifar10_{train,test}.rsds and svhn_{train,test}.rsds into `dir`.
/// Each test file carries the statistics of its train file. Returns the paths.
std::vector<std::filesystem::path> write_suite(const std::filesystem::path& dir, const SuiteSizes& sizes,
                                               std::uint64_t seed);

}  // namespace repsim::synthetic
