#include "repsim/labels.hpp"

#include <charconv>

#include "repsim/error.hpp"
#include "repsim/rng.hpp"

namespace repsim::labels {
namespace {

void check_labels(std::span<const std::int32_t> labels, int num_classes) {
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes) {
      throw ConfigError("label " + std::to_string(labels[i]) + " at index " + std::to_string(i) + " outside [0, " +
                        std::to_string(num_classes) + ")");
    }
  }
}

int parse_int(const std::string& text, const std::string& whole) {
  int value = 0;
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || end != text.data() + text.size()) {
    throw ConfigError("label transform '" + whole + "': '" + text + "' is not an integer");
  }
  return value;
}

}  // namespace

void LabelTransform::validate(int num_classes) const {
  switch (kind) {
    case Kind::identity:
      return;
    case Kind::partial_random:
      if (amount < 0 || amount > num_classes - 1) {
        throw ConfigError("partial_random: d=" + std::to_string(amount) + " outside {0, ..., " +
                          std::to_string(num_classes - 1) + "}");
      }
      return;
    case Kind::shift:
      if (amount < 1 || amount > num_classes - 1) {
        throw ConfigError("shift: s=" + std::to_string(amount) + " outside {1, ..., " +
                          std::to_string(num_classes - 1) + "}");
      }
      return;
  }
}

std::string to_string(const LabelTransform& transform) {
  switch (transform.kind) {
    case LabelTransform::Kind::identity: return "identity";
    case LabelTransform::Kind::partial_random: return "random:" + std::to_string(transform.amount);
    case LabelTransform::Kind::shift: return "shift:" + std::to_string(transform.amount);
  }
  return "identity";
}

LabelTransform parse_transform(const std::string& text) {
  if (text == "identity") return LabelTransform::identity();
  const auto colon = text.find(':');
  if (colon != std::string::npos) {
    const std::string head = text.substr(0, colon);
    const int value = parse_int(text.substr(colon + 1), text);
    if (head == "random") return LabelTransform::partial_random(value);
    if (head == "shift") return LabelTransform::shift(value);
  }
  throw ConfigError("unknown label transform '" + text + "' (expected identity, random:<d> or shift:<s>)");
}

nn::Labels randomize_labels(std::span<const std::int32_t> labels, int d, int num_classes, std::uint64_t seed) {
  LabelTransform::partial_random(d).validate(num_classes);
  check_labels(labels, num_classes);
  Rng rng(derive_seed(seed, "partial_random"));
  nn::Labels out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto offset = static_cast<std::int32_t>(rng.below(static_cast<std::uint64_t>(d) + 1));
    out[i] = (labels[i] + offset) % num_classes;
  }
  return out;
}

nn::Labels shift_labels(std::span<const std::int32_t> labels, int s, int num_classes) {
  LabelTransform::shift(s).validate(num_classes);
  check_labels(labels, num_classes);
  nn::Labels out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) out[i] = (labels[i] + s) % num_classes;
  return out;
}

nn::Labels apply(const LabelTransform& transform, std::span<const std::int32_t> labels, int num_classes,
                 std::uint64_t seed) {
  switch (transform.kind) {
    case LabelTransform::Kind::identity:
      check_labels(labels, num_classes);
      return nn::Labels(labels.begin(), labels.end());
    case LabelTransform::Kind::partial_random:
      return randomize_labels(labels, transform.amount, num_classes, seed);
    case LabelTransform::Kind::shift:
      return shift_labels(labels, transform.amount, num_classes);
  }
  return nn::Labels(labels.begin(), labels.end());
}

}  // namespace repsim::labels
