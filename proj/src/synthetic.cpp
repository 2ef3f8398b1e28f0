#include "repsim/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "repsim/error.hpp"
#include "repsim/rng.hpp"

namespace repsim::synthetic {
namespace {

constexpr std::size_t kSide = 32;
constexpr std::size_t kPlane = kSide * kSide;
constexpr std::size_t kClasses = 10;

using Image = std::array<double, 3 * kPlane>;

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

void add_noise_and_quantize(Image& img, Rng& rng, double sigma, std::uint8_t* out) {
  for (std::size_t i = 0; i < img.size(); ++i) {
    const double v = clamp01(img[i] + sigma * rng.normal());
    out[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
}

// Per-class colour tint applied to the grating modulation.
constexpr std::array<std::array<double, 3>, kClasses> kTint = {{
    {0.6, -0.2, -0.4},
    {-0.3, 0.5, -0.2},
    {-0.2, -0.3, 0.6},
    {0.4, 0.4, -0.6},
    {-0.5, 0.2, 0.4},
    {0.2, -0.5, 0.3},
    {0.5, 0.0, -0.5},
    {-0.4, -0.1, 0.5},
    {0.0, 0.5, -0.4},
    {0.3, -0.4, 0.1},
}};

void render_object(std::size_t label, Rng& rng, std::uint8_t* out) {
  Image img{};
  std::array<double, 3> background, base;
  for (double& b : background) b = rng.uniform(0.15, 0.85);
  for (double& b : base) b = rng.uniform(0.3, 0.7);

  const double degrees = static_cast<double>(label % 5) * 36.0 + 6.0 * rng.normal();
  const double theta = degrees * std::numbers::pi / 180.0;
  const double frequency = (label < 5 ? 0.10 : 0.21) * rng.uniform(0.9, 1.1);
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double amplitude = rng.uniform(0.18, 0.32);
  const double cx = rng.uniform(10.0, 22.0), cy = rng.uniform(10.0, 22.0);
  const double radius = rng.uniform(7.0, 11.0);
  const double ct = std::cos(theta), st = std::sin(theta);

  for (std::size_t y = 0; y < kSide; ++y) {
    for (std::size_t x = 0; x < kSide; ++x) {
      const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
      const double dist = std::hypot(px - cx, py - cy);
      const double mask = clamp01((radius - dist) / 2.0 + 0.5);
      const double wave = std::sin(2.0 * std::numbers::pi * frequency * (px * ct + py * st) + phase);
      for (std::size_t c = 0; c < 3; ++c) {
        const double object = base[c] + amplitude * wave * (1.0 + 0.3 * kTint[label][c]);
        img[c * kPlane + y * kSide + x] = (1.0 - mask) * background[c] + mask * object;
      }
    }
  }
  add_noise_and_quantize(img, rng, 0.05, out);
}

// Seven-segment encoding, bits a..g = 0..6.
constexpr std::array<std::uint8_t, kClasses> kSegments = {
    0b0111111, 0b0000110, 0b1011011, 0b1001111, 0b1100110,
    0b1101101, 0b1111101, 0b0000111, 0b1111111, 0b1101111,
};

struct Glyph {
  double x0, y0, width, height, stroke, shear;
};

bool covers(const Glyph& g, std::uint8_t segments, double px, double py) {
  const double v = py - g.y0;
  if (v < 0.0 || v > g.height) return false;
  const double u = px - g.x0 - g.shear * (v - g.height / 2.0);
  if (u < 0.0 || u > g.width) return false;
  const double t = g.stroke, w = g.width, h = g.height, mid = h / 2.0;
  const bool in[7] = {
      v <= t,                                   // a
      u >= w - t && v <= mid,                   // b
      u >= w - t && v >= mid,                   // c
      v >= h - t,                               // d
      u <= t && v >= mid,                       // e
      u <= t && v <= mid,                       // f
      v >= mid - t / 2.0 && v <= mid + t / 2.0  // g
  };
  for (int s = 0; s < 7; ++s) {
    if (in[s] && (segments >> s & 1)) return true;
  }
  return false;
}

void render_digit(std::size_t label, Rng& rng, std::uint8_t* out) {
  Image img{};
  std::array<double, 3> background, foreground;
  for (double& b : background) b = rng.uniform(0.0, 1.0);
  // Foreground differs from background by at least 0.35 in mean intensity.
  const double bg_mean = (background[0] + background[1] + background[2]) / 3.0;
  const double target = bg_mean > 0.5 ? rng.uniform(0.0, bg_mean - 0.35) : rng.uniform(bg_mean + 0.35, 1.0);
  for (std::size_t c = 0; c < 3; ++c) foreground[c] = clamp01(target + rng.uniform(-0.15, 0.15));

  const double height = rng.uniform(16.0, 22.0);
  const double width = height * rng.uniform(0.5, 0.6);
  const double stroke = rng.uniform(2.0, 3.5);
  const double shear = rng.uniform(-0.15, 0.15);
  const Glyph centre{16.0 - width / 2.0 + rng.uniform(-2.5, 2.5), 16.0 - height / 2.0 + rng.uniform(-2.5, 2.5), width,
                     height, stroke, shear};
  const double gap = rng.uniform(2.0, 4.0);
  const Glyph left{centre.x0 - width - gap, centre.y0, width, height, stroke, shear};
  const Glyph right{centre.x0 + width + gap, centre.y0, width, height, stroke, shear};
  const std::uint8_t left_segments = kSegments[rng.below(kClasses)];
  const std::uint8_t right_segments = kSegments[rng.below(kClasses)];

  for (std::size_t y = 0; y < kSide; ++y) {
    for (std::size_t x = 0; x < kSide; ++x) {
      // 2x2 supersampling for anti-aliased strokes.
      double coverage = 0.0;
      for (double dy : {0.25, 0.75}) {
        for (double dx : {0.25, 0.75}) {
          const double px = static_cast<double>(x) + dx, py = static_cast<double>(y) + dy;
          if (covers(centre, kSegments[label], px, py) || covers(left, left_segments, px, py) ||
              covers(right, right_segments, px, py)) {
            coverage += 0.25;
          }
        }
      }
      for (std::size_t c = 0; c < 3; ++c) {
        img[c * kPlane + y * kSide + x] = (1.0 - coverage) * background[c] + coverage * foreground[c];
      }
    }
  }
  add_noise_and_quantize(img, rng, 0.04, out);
}

}  // namespace

std::string to_string(Family family) { return family == Family::objects ? "objects" : "digits"; }

RawDataset generate(Family family, std::size_t count, std::uint64_t seed) {
  if (count == 0) throw ConfigError("synthetic: count must be positive");
  RawDataset raw;
  raw.header.count = static_cast<std::uint32_t>(count);
  raw.labels.resize(count);
  raw.pixels.resize(count * 3 * kPlane);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t label = i % kClasses;
    raw.labels[i] = static_cast<std::uint8_t>(label);
    Rng rng(derive_seed(seed, to_string(family), i));
    std::uint8_t* out = raw.pixels.data() + i * 3 * kPlane;
    if (family == Family::objects) {
      render_object(label, rng, out);
    } else {
      render_digit(label, rng, out);
    }
  }
  std::tie(raw.header.mean, raw.header.std) = channel_statistics(raw);
  return raw;
}

std::vector<std::filesystem::path> write_suite(const std::filesystem::path& dir, const SuiteSizes& sizes,
                                               std::uint64_t seed) {
  std::vector<std::filesystem::path> written;
  auto emit = [&](Family family, const std::string& name, std::size_t n_train, std::size_t n_test) {
    RawDataset train = generate(family, n_train, derive_seed(seed, name + "_train"));
    RawDataset test = generate(family, n_test, derive_seed(seed, name + "_test"));
    test.header.mean = train.header.mean;
    test.header.std = train.header.std;
    written.push_back(dir / (name + "_train.rsds"));
    write_rsds(train, written.back());
    written.push_back(dir / (name + "_test.rsds"));
    write_rsds(test, written.back());
  };
  emit(Family::objects, "cifar10", sizes.objects_train, sizes.objects_test);
  emit(Family::digits, "svhn", sizes.digits_train, sizes.digits_test);
  return written;
}

}  // namespace repsim::synthetic
