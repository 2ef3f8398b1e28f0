#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "repsim/layers.hpp"

namespace repsim::labels {

/// A label transformation applied once to a dataset before training.
struct LabelTransform {
  enum class Kind { identity, partial_random, shift };

  Kind kind = Kind::identity;
  int amount = 0;  // d for partial_random, s for shift

  static LabelTransform identity() { return {}; }
  static LabelTransform partial_random(int d) { return {Kind::partial_random, d}; }
  static LabelTransform shift(int s) { return {Kind::shift, s}; }

  /// Throws ConfigError if `amount` is out of range for `num_classes`.
  void validate(int num_classes) const;

  friend bool operator==(const LabelTransform&, const LabelTransform&) = default;
};

/// "identity", "random:<d>", "shift:<s>".
std::string to_string(const LabelTransform& transform);
LabelTransform parse_transform(const std::string& text);

/// y_d = (y + Y) mod D with Y uniform on {0, ..., d}, drawn independently per
/// label from a stream seeded by `seed`. d = 0 is the identity, d = D - 1 makes
/// the labels uniformly random.
nn::Labels randomize_labels(std::span<const std::int32_t> labels, int d, int num_classes, std::uint64_t seed);

/// y_S = (y + s) mod D for 1 <= s <= D - 1.
nn::Labels shift_labels(std::span<const std::int32_t> labels, int s, int num_classes);

/// Dispatches on the transform kind; `seed` is only read for partial_random.
nn::Labels apply(const LabelTransform& transform, std::span<const std::int32_t> labels, int num_classes,
                 std::uint64_t seed);

}  // namespace repsim::labels
